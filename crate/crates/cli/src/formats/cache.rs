//! Binary token cache:
//! `"STKN" | version u32 LE (=1) | dim u32 | count u32 |`
//! `count x (sheet_id u32, dim x f32 LE)`, entries ascending by sheet_id.

use std::path::Path;

use sheettoken_core::record::{RecordError, TokenCache};

use super::{read_file, write_file, Cursor, FormatError};

pub const CACHE_MAGIC: [u8; 4] = *b"STKN";
pub const CACHE_VERSION: u32 = 1;

pub fn write_token_cache(cache: &TokenCache, path: &Path) -> Result<(), FormatError> {
    let mut bytes = Vec::with_capacity(16 + cache.len() * (4 + cache.dim() * 4));
    bytes.extend_from_slice(&CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(cache.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(cache.len() as u32).to_le_bytes());
    for (id, token) in cache.iter() {
        bytes.extend_from_slice(&id.to_le_bytes());
        for v in token {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &bytes)
}

pub fn read_token_cache(path: &Path) -> Result<TokenCache, FormatError> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(path, &bytes);
    cur.magic(CACHE_MAGIC)?;
    let version = cur.u32("version")?;
    if version != CACHE_VERSION {
        return Err(FormatError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dim = cur.u32("dim")? as usize;
    let count = cur.u32("count")? as usize;
    if dim == 0 {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            source: RecordError::TokenDimMismatch(0, 0, 0),
        });
    }
    let mut cache = TokenCache::new(dim);
    for _ in 0..count {
        let id = cur.u32("sheet_id")?;
        let mut token = Vec::with_capacity(dim);
        for _ in 0..dim {
            token.push(cur.f32("token component")?);
        }
        if cache.get(id).is_some() {
            return Err(FormatError::DuplicateId {
                path: path.to_path_buf(),
                id,
            });
        }
        cache.insert(id, token).map_err(|source| match source {
            RecordError::NonFiniteToken(_) => FormatError::NonFinite {
                path: path.to_path_buf(),
                context: "token",
            },
            other => FormatError::Invalid {
                path: path.to_path_buf(),
                source: other,
            },
        })?;
    }
    cur.finish()?;
    Ok(cache)
}
