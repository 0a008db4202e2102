//! Versioned parameter files, packed with the same f32-LE discipline as the
//! token cache. Matrices are stored as `rows u32 | cols u32 | rows*cols f32`.

use std::path::Path;

use sheettoken_core::matrix::Matrix;
use sheettoken_core::retriever::{RetrieverParams, GCN_LAYERS, NUM_CHANNELS};
use sheettoken_core::EncoderParams;

use super::{read_file, write_file, Cursor, FormatError};

pub const ENCODER_MAGIC: [u8; 4] = *b"STEN";
pub const RETRIEVER_MAGIC: [u8; 4] = *b"STRT";
pub const MODEL_VERSION: u32 = 1;

fn push_matrix(bytes: &mut Vec<u8>, m: &Matrix) {
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_matrix(cur: &mut Cursor, path: &Path) -> Result<Matrix, FormatError> {
    let rows = cur.u32("matrix rows")? as usize;
    let cols = cur.u32("matrix cols")? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let v = cur.f32("matrix entry")? as f64;
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                path: path.to_path_buf(),
                context: "matrix entry",
            });
        }
        data.push(v);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn store_encoder_params(params: &EncoderParams, path: &Path) -> Result<(), FormatError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&ENCODER_MAGIC);
    bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.hash_buckets as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.header_cap as u32).to_le_bytes());
    bytes.extend_from_slice(&u32::from(params.include_examples).to_le_bytes());
    for m in [
        &params.embedding,
        &params.proj_w1,
        &params.proj_b1,
        &params.proj_w2,
        &params.proj_b2,
        &params.head_w1,
        &params.head_b1,
        &params.head_w2,
        &params.head_b2,
    ] {
        push_matrix(&mut bytes, m);
    }
    write_file(path, &bytes)
}

pub fn load_encoder_params(path: &Path) -> Result<EncoderParams, FormatError> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(path, &bytes);
    cur.magic(ENCODER_MAGIC)?;
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(FormatError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dim = cur.u32("dim")? as usize;
    let hash_buckets = cur.u32("hash_buckets")? as usize;
    let header_cap = cur.u32("header_cap")? as usize;
    let include_examples = cur.u32("include_examples")? != 0;
    let embedding = read_matrix(&mut cur, path)?;
    let proj_w1 = read_matrix(&mut cur, path)?;
    let proj_b1 = read_matrix(&mut cur, path)?;
    let proj_w2 = read_matrix(&mut cur, path)?;
    let proj_b2 = read_matrix(&mut cur, path)?;
    let head_w1 = read_matrix(&mut cur, path)?;
    let head_b1 = read_matrix(&mut cur, path)?;
    let head_w2 = read_matrix(&mut cur, path)?;
    let head_b2 = read_matrix(&mut cur, path)?;
    cur.finish()?;
    Ok(EncoderParams {
        dim,
        hash_buckets,
        header_cap,
        include_examples,
        embedding,
        proj_w1,
        proj_b1,
        proj_w2,
        proj_b2,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
    })
}

pub fn store_retriever_params(params: &RetrieverParams, path: &Path) -> Result<(), FormatError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&RETRIEVER_MAGIC);
    bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.num_stages as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.dim as u32).to_le_bytes());
    for v in [
        params.tau_pool,
        params.tau_ret,
        params.lambda_align,
        params.lambda_node,
    ] {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    push_matrix(&mut bytes, &params.stage_logits);
    bytes.extend_from_slice(&(params.gcn.len() as u32).to_le_bytes());
    for w in &params.gcn {
        push_matrix(&mut bytes, w);
    }
    for m in [
        &params.head_w1,
        &params.head_b1,
        &params.head_w2,
        &params.head_b2,
    ] {
        push_matrix(&mut bytes, m);
    }
    write_file(path, &bytes)
}

pub fn load_retriever_params(path: &Path) -> Result<RetrieverParams, FormatError> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(path, &bytes);
    cur.magic(RETRIEVER_MAGIC)?;
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(FormatError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let num_stages = cur.u32("num_stages")? as usize;
    let dim = cur.u32("dim")? as usize;
    let tau_pool = cur.f32("tau_pool")? as f64;
    let tau_ret = cur.f32("tau_ret")? as f64;
    let lambda_align = cur.f32("lambda_align")? as f64;
    let lambda_node = cur.f32("lambda_node")? as f64;
    let stage_logits = read_matrix(&mut cur, path)?;
    let layers = cur.u32("gcn layer count")? as usize;
    let mut gcn = Vec::with_capacity(layers);
    for _ in 0..layers {
        gcn.push(read_matrix(&mut cur, path)?);
    }
    let head_w1 = read_matrix(&mut cur, path)?;
    let head_b1 = read_matrix(&mut cur, path)?;
    let head_w2 = read_matrix(&mut cur, path)?;
    let head_b2 = read_matrix(&mut cur, path)?;
    cur.finish()?;

    let params = RetrieverParams {
        num_stages,
        dim,
        stage_logits,
        gcn,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
        tau_pool,
        tau_ret,
        lambda_align,
        lambda_node,
    };
    if params.stage_logits.rows() != num_stages
        || params.stage_logits.cols() != NUM_CHANNELS
        || params.gcn.len() != GCN_LAYERS
    {
        return Err(FormatError::BadShape {
            path: path.to_path_buf(),
            context: "retriever parameters",
        });
    }
    Ok(params)
}
