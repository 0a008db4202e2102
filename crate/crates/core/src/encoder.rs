//! Stage 1: the sheet encoder.
//!
//! A [`SheetRecord`] is serialized through a fixed structural template,
//! tokenized into weighted word unigrams plus boundary-marked character
//! trigrams, hashed into an embedding table, sum-pooled, passed through a
//! residual two-layer MLP and L2-normalized into a unit *sheet token*. A pair head over
//! `[z1, z2, |z1-z2|, z1 (.) z2]` produces match/non-match logits, trained
//! with label-smoothed cross-entropy on pairwise supervision.
//!
//! The backend is deterministic: no dropout, no randomness at inference, and
//! training is single-threaded with seeded shuffling. Queries are embedded
//! through [`embed_text`] on the raw query string, no template.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait methods back f64 math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::matrix::Matrix;
use crate::metrics::{normalized_entropy, pairwise_accuracy, Split, TrainLog};
use crate::optim::Sgd;
use crate::record::{PairExample, SheetCatalog, SheetRecord, TokenCache};

/// Stage 1 hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Token dimension d.
    pub dim: usize,
    /// Serialize at most this many headers (k).
    pub header_cap: usize,
    /// Label smoothing alpha.
    pub smoothing: f64,
    /// Embedding table rows; must be a power of two.
    pub hash_buckets: usize,
    /// Annotate headers with example values in the serialization
    /// (the "w/o column examples" ablation turns this off).
    pub include_examples: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 128,
            header_cap: 12,
            smoothing: 0.1,
            hash_buckets: 1 << 16,
            include_examples: true,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.dim == 0 || self.header_cap == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig("zero-sized configuration field"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(TrainError::BadConfig("smoothing outside [0,1)"));
        }
        if !self.hash_buckets.is_power_of_two() {
            return Err(TrainError::BadConfig("hash_buckets must be a power of two"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("empty training split")]
    EmptySplit,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("record error: {0}")]
    Record(#[from] crate::record::RecordError),
}

/// The deterministic textual form of one sheet record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedSheet {
    pub text: String,
}

/// Serializes a record as
/// `source: <name>; shape: <R>x<C>; headers: h1 (e1) | h2 (e2) | ...`,
/// keeping at most `header_cap` headers. Example annotations are dropped for
/// empty examples and when `include_examples` is off.
pub fn serialize(record: &SheetRecord, header_cap: usize, include_examples: bool) -> SerializedSheet {
    assert!(header_cap >= 1, "header cap must be >= 1");
    // Canonical trimming: surrounding whitespace in stored strings never
    // reaches the token.
    let mut text = format!(
        "source: {}; shape: {}x{}; headers: ",
        record.source_name.trim(),
        record.num_rows,
        record.num_cols
    );
    let mut first = true;
    for col in record.columns.iter().take(header_cap) {
        if !first {
            text.push_str(" | ");
        }
        first = false;
        text.push_str(col.header.trim());
        let example = col.example.trim();
        if include_examples && !example.is_empty() {
            text.push_str(" (");
            text.push_str(example);
            text.push(')');
        }
    }
    SerializedSheet { text }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(namespace: u8, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    h ^= namespace as u64;
    h = h.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Exact word matches carry more evidence than their constituent trigrams,
/// so unigram features enter the pooled sum with this multiplicity.
pub const UNIGRAM_WEIGHT: u32 = 3;

/// Hashed feature multiset of a text: lowercased word unigrams (weighted by
/// [`UNIGRAM_WEIGHT`]) plus boundary-marked character trigrams of every word
/// (`q2` contributes `^q2` and `q2$`), each folded into `buckets` (a power
/// of two). Returned as bucket -> multiplicity, in bucket order.
pub fn feature_counts(text: &str, buckets: usize) -> BTreeMap<u32, u32> {
    debug_assert!(buckets.is_power_of_two());
    let mask = (buckets - 1) as u64;
    let lower = text.to_lowercase();
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut bump = |h: u64, weight: u32| {
        *counts.entry((h & mask) as u32).or_insert(0) += weight;
    };

    let mut padded = String::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        bump(fnv1a(b'u', word.as_bytes()), UNIGRAM_WEIGHT);
        padded.clear();
        padded.push('^');
        padded.push_str(word);
        padded.push('$');
        let chars: Vec<char> = padded.chars().collect();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for &c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            bump(fnv1a(b't', &buf[..len]), 1);
        }
    }
    counts
}

/// Trainable Stage 1 state. Structural sizes travel with the weights so a
/// model file is self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim: usize,
    pub hash_buckets: usize,
    pub header_cap: usize,
    pub include_examples: bool,
    /// hash_buckets x d feature embeddings.
    pub embedding: Matrix,
    /// Projection: two affine d->d layers with a ReLU between.
    pub proj_w1: Matrix,
    pub proj_b1: Matrix,
    pub proj_w2: Matrix,
    pub proj_b2: Matrix,
    /// Pair head: affine 4d->d, ReLU, affine d->2. Discarded at inference.
    pub head_w1: Matrix,
    pub head_b1: Matrix,
    pub head_w2: Matrix,
    pub head_b2: Matrix,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig) -> Self {
        let d = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();
        EncoderParams {
            dim: d,
            hash_buckets: cfg.hash_buckets,
            header_cap: cfg.header_cap,
            include_examples: cfg.include_examples,
            embedding: Matrix::randn(cfg.hash_buckets, d, 0.05, &mut rng),
            proj_w1: Matrix::randn(d, d, inv_sqrt(d), &mut rng),
            proj_b1: Matrix::zeros(1, d),
            proj_w2: Matrix::randn(d, d, inv_sqrt(d), &mut rng),
            proj_b2: Matrix::zeros(1, d),
            head_w1: Matrix::randn(4 * d, d, inv_sqrt(4 * d), &mut rng),
            head_b1: Matrix::zeros(1, d),
            head_w2: Matrix::randn(d, 2, inv_sqrt(d), &mut rng),
            head_b2: Matrix::zeros(1, 2),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.is_finite()
            && self.proj_w1.is_finite()
            && self.proj_b1.is_finite()
            && self.proj_w2.is_finite()
            && self.proj_b2.is_finite()
            && self.head_w1.is_finite()
            && self.head_b1.is_finite()
            && self.head_w2.is_finite()
            && self.head_b2.is_finite()
    }
}

fn pooled_vector(counts: &BTreeMap<u32, u32>, params: &EncoderParams) -> Matrix {
    let mut pooled = Matrix::zeros(1, params.dim);
    for (&bucket, &count) in counts {
        pooled.row_mut(0)
            .iter_mut()
            .zip(params.embedding.row(bucket as usize))
            .for_each(|(o, &e)| *o += count as f64 * e);
    }
    pooled
}

fn project(pooled: &Matrix, params: &EncoderParams) -> Vec<f64> {
    // residual projection: the raw hashed signal always survives into the
    // token, the MLP learns a correction on top of it
    let h1 = pooled
        .matmul(&params.proj_w1)
        .add(&params.proj_b1)
        .map(|v| v.max(0.0));
    let z = h1.matmul(&params.proj_w2).add(&params.proj_b2).add(pooled);
    let norm = crate::matrix::l2_norm(z.data());
    if norm > 0.0 {
        z.scale(1.0 / norm).data().to_vec()
    } else {
        z.data().to_vec()
    }
}

/// Embeds raw text (used for queries) into a unit-norm vector.
pub fn embed_text(text: &str, params: &EncoderParams) -> Vec<f64> {
    let counts = feature_counts(text, params.hash_buckets);
    project(&pooled_vector(&counts, params), params)
}

/// Embeds one record into its sheet token.
pub fn embed_record(record: &SheetRecord, params: &EncoderParams) -> Vec<f64> {
    let text = serialize(record, params.header_cap, params.include_examples).text;
    embed_text(&text, params)
}

/// Pair-head logits for two unit tokens: `[non-match, match]`.
pub fn pair_logits(z1: &[f64], z2: &[f64], params: &EncoderParams) -> [f64; 2] {
    assert_eq!(z1.len(), params.dim, "token dimension mismatch");
    assert_eq!(z2.len(), params.dim, "token dimension mismatch");
    let d = params.dim;
    let mut feats = Matrix::zeros(1, 4 * d);
    for j in 0..d {
        feats.set(0, j, z1[j]);
        feats.set(0, d + j, z2[j]);
        feats.set(0, 2 * d + j, (z1[j] - z2[j]).abs());
        feats.set(0, 3 * d + j, z1[j] * z2[j]);
    }
    let h = feats
        .matmul(&params.head_w1)
        .add(&params.head_b1)
        .map(|v| v.max(0.0));
    let logits = h.matmul(&params.head_w2).add(&params.head_b2);
    [logits.get(0, 0), logits.get(0, 1)]
}

/// Label-smoothed cross-entropy over two classes:
/// `-(1-alpha) sum_c y_c log p_c - (alpha/C) sum_c log p_c`, `C = 2`.
///
/// Reduces exactly to plain cross-entropy at `alpha = 0`. Probabilities are
/// formed by a max-subtracted softmax, and logs are clamped at 1e-12.
pub fn smoothed_ce(logits: &[f64; 2], label: bool, alpha: f64) -> f64 {
    assert!((0.0..1.0).contains(&alpha), "alpha outside [0,1)");
    let p = crate::matrix::softmax(logits, 1.0);
    let target = usize::from(label);
    let log_p: Vec<f64> = p.iter().map(|&x| x.max(1e-12).ln()).collect();
    -(1.0 - alpha) * log_p[target] - alpha / 2.0 * (log_p[0] + log_p[1])
}

/// Match probability from the pair head.
pub fn match_probability(logits: &[f64; 2]) -> f64 {
    crate::matrix::softmax(logits, 1.0)[1]
}

/// Dense parameter leaves registered on a training tape, in update order.
struct DenseVars {
    vars: [Var; 8],
}

fn register_dense(tape: &mut Tape, p: &EncoderParams) -> DenseVars {
    DenseVars {
        vars: [
            tape.leaf(p.proj_w1.clone()),
            tape.leaf(p.proj_b1.clone()),
            tape.leaf(p.proj_w2.clone()),
            tape.leaf(p.proj_b2.clone()),
            tape.leaf(p.head_w1.clone()),
            tape.leaf(p.head_b1.clone()),
            tape.leaf(p.head_w2.clone()),
            tape.leaf(p.head_b2.clone()),
        ],
    }
}

fn dense_params_mut(p: &mut EncoderParams) -> [&mut Matrix; 8] {
    [
        &mut p.proj_w1,
        &mut p.proj_b1,
        &mut p.proj_w2,
        &mut p.proj_b2,
        &mut p.head_w1,
        &mut p.head_b1,
        &mut p.head_w2,
        &mut p.head_b2,
    ]
}

/// Taped projection of a pooled feature vector into a unit token.
fn taped_token(tape: &mut Tape, dense: &DenseVars, pooled: Var) -> Var {
    let [w1, b1, w2, b2, ..] = dense.vars;
    let a1 = tape.matmul(pooled, w1);
    let a1 = tape.add_bias_row(a1, b1);
    let h1 = tape.relu(a1);
    let a2 = tape.matmul(h1, w2);
    let correction = tape.add_bias_row(a2, b2);
    let z = tape.add(correction, pooled);
    tape.l2_normalize(z)
}

/// Taped pair loss: tokens, interaction features, head, smoothed CE.
fn taped_pair_loss(
    tape: &mut Tape,
    dense: &DenseVars,
    pooled1: Var,
    pooled2: Var,
    label: bool,
    alpha: f64,
) -> Var {
    let [.., hw1, hb1, hw2, hb2] = dense.vars;
    let z1 = taped_token(tape, dense, pooled1);
    let z2 = taped_token(tape, dense, pooled2);
    let diff = tape.sub(z1, z2);
    let ad = tape.abs(diff);
    let prod = tape.hadamard(z1, z2);
    let feats = tape.concat_cols(&[z1, z2, ad, prod]);
    let a = tape.matmul(feats, hw1);
    let a = tape.add_bias_row(a, hb1);
    let h = tape.relu(a);
    let logits = tape.matmul(h, hw2);
    let logits = tape.add_bias_row(logits, hb2);
    tape.smoothed_ce_logits(logits, usize::from(label), alpha)
}

struct PreparedSheet {
    counts: BTreeMap<u32, u32>,
}

/// Trains the encoder with mini-batch SGD.
///
/// Dense layers use momentum 0.9 with a linear learning-rate decay; the
/// embedding table takes plain sparse updates on the buckets each batch
/// touches. Deterministic given the config seed.
pub fn train_encoder(
    catalog: &SheetCatalog,
    pairs_train: &[PairExample],
    pairs_eval: &[PairExample],
    cfg: &EncoderConfig,
) -> Result<(EncoderParams, TrainLog), TrainError> {
    cfg.validate()?;
    if pairs_train.is_empty() || pairs_eval.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    for p in pairs_train.iter().chain(pairs_eval) {
        p.validate_against(catalog)?;
    }

    let mut params = EncoderParams::init(cfg);
    let mut log = TrainLog::default();

    // Tokenization is independent of the weights: do it once.
    let mut prepared: BTreeMap<u32, PreparedSheet> = BTreeMap::new();
    for p in pairs_train.iter().chain(pairs_eval) {
        for id in [p.id1, p.id2] {
            prepared.entry(id).or_insert_with(|| {
                let record = catalog.get(id).expect("validated above");
                let text = serialize(record, cfg.header_cap, cfg.include_examples).text;
                PreparedSheet {
                    counts: feature_counts(&text, cfg.hash_buckets),
                }
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..pairs_train.len()).collect();
    let mut opt = Sgd::new(0.9, &dense_params_mut(&mut params).map(|m| &*m));

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate * (1.0 - (epoch - 1) as f64 / cfg.epochs as f64);
        order.shuffle(&mut rng);

        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let dense = register_dense(&mut tape, &params);
            let mut pooled_vars: Vec<(Var, u32)> = Vec::with_capacity(batch.len() * 2);
            let mut losses = Vec::with_capacity(batch.len());
            for &pi in batch {
                let pair = &pairs_train[pi];
                let p1 = tape.leaf(pooled_vector(&prepared[&pair.id1].counts, &params));
                let p2 = tape.leaf(pooled_vector(&prepared[&pair.id2].counts, &params));
                pooled_vars.push((p1, pair.id1));
                pooled_vars.push((p2, pair.id2));
                losses.push(taped_pair_loss(&mut tape, &dense, p1, p2, pair.label, cfg.smoothing));
            }
            let stacked = tape.concat_cols(&losses);
            let loss = tape.mean_all(stacked);
            let loss_value = tape.value(loss).scalar();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            let grads = tape.backward(loss);

            let grad_refs: Vec<Option<&Matrix>> =
                dense.vars.iter().map(|&v| grads.get(v)).collect();
            opt.step(&mut dense_params_mut(&mut params), &grad_refs, lr);

            // Sparse table update: d pooled / d row[bucket] = multiplicity.
            for (var, id) in pooled_vars {
                let Some(g) = grads.get(var) else { continue };
                for (&bucket, &count) in &prepared[&id].counts {
                    let row = params.embedding.row_mut(bucket as usize);
                    let scale = lr * count as f64;
                    for (w, &gv) in row.iter_mut().zip(g.row(0)) {
                        *w -= scale * gv;
                    }
                }
            }
        }

        let (train_acc, train_ent) = evaluate_prepared(pairs_train, &params, &prepared);
        let (eval_acc, eval_ent) = evaluate_prepared(pairs_eval, &params, &prepared);
        log.push(epoch, Split::Train, train_acc, train_ent);
        log.push(epoch, Split::Eval, eval_acc, eval_ent);
    }

    Ok((params, log))
}

/// Pairwise accuracy and normalized entropy of a parameter set on a split.
pub fn evaluate_pairs(
    catalog: &SheetCatalog,
    pairs: &[PairExample],
    params: &EncoderParams,
) -> (f64, f64) {
    let mut prepared: BTreeMap<u32, PreparedSheet> = BTreeMap::new();
    for p in pairs {
        for id in [p.id1, p.id2] {
            prepared.entry(id).or_insert_with(|| {
                let record = catalog.get(id).expect("pair ids resolve in the catalog");
                let text = serialize(record, params.header_cap, params.include_examples).text;
                PreparedSheet {
                    counts: feature_counts(&text, params.hash_buckets),
                }
            });
        }
    }
    evaluate_prepared(pairs, params, &prepared)
}

fn evaluate_prepared(
    pairs: &[PairExample],
    params: &EncoderParams,
    prepared: &BTreeMap<u32, PreparedSheet>,
) -> (f64, f64) {
    let mut tokens: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        for id in [p.id1, p.id2] {
            tokens
                .entry(id)
                .or_insert_with(|| project(&pooled_vector(&prepared[&id].counts, params), params));
        }
    }
    let mut preds = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    let mut confidences = Vec::with_capacity(pairs.len());
    for p in pairs {
        let logits = pair_logits(&tokens[&p.id1], &tokens[&p.id2], params);
        let prob_match = match_probability(&logits);
        preds.push(prob_match >= 0.5);
        labels.push(p.label);
        confidences.push(prob_match.max(1.0 - prob_match));
    }
    (
        pairwise_accuracy(&preds, &labels),
        normalized_entropy(&confidences),
    )
}

/// Encodes every catalog sheet into the token cache, in sheet_id order.
/// `embed_record` is pure, so any execution order yields the same cache.
pub fn encode_catalog(catalog: &SheetCatalog, params: &EncoderParams) -> TokenCache {
    let mut cache = TokenCache::new(params.dim);
    for record in catalog.iter() {
        let token: Vec<f32> = embed_record(record, params)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        cache
            .insert(record.sheet_id, token)
            .expect("embedding has the configured dimension");
    }
    cache
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ColumnMeta;
    use alloc::string::ToString;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            dim: 8,
            hash_buckets: 64,
            learning_rate: 0.1,
            epochs: 2,
            batch_size: 4,
            seed: 7,
            ..EncoderConfig::default()
        }
    }

    fn record(id: u32, name: &str, headers: &[(&str, &str)]) -> SheetRecord {
        SheetRecord {
            sheet_id: id,
            source_name: name.to_string(),
            num_rows: 100,
            num_cols: headers.len() as u32,
            columns: headers
                .iter()
                .map(|(h, e)| ColumnMeta {
                    header: h.to_string(),
                    example: e.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn serialization_matches_the_template() {
        let r = record(
            0,
            "prices.xlsx::Sheet1",
            &[("Index", "1"), ("Date", "2000-01-07"), ("Open", "12.3"), ("Close", "13.1")],
        );
        let s = serialize(&r, 12, true);
        assert_eq!(
            s.text,
            "source: prices.xlsx::Sheet1; shape: 100x4; headers: \
             Index (1) | Date (2000-01-07) | Open (12.3) | Close (13.1)"
        );
        let bare = serialize(&r, 12, false);
        assert_eq!(
            bare.text,
            "source: prices.xlsx::Sheet1; shape: 100x4; headers: Index | Date | Open | Close"
        );
    }

    #[test]
    fn serialization_caps_headers_at_k() {
        let headers: Vec<(String, String)> = (0..20)
            .map(|i| (format!("H{i}"), String::new()))
            .collect();
        let pairs: Vec<(&str, &str)> = headers
            .iter()
            .map(|(h, e)| (h.as_str(), e.as_str()))
            .collect();
        let r = record(0, "book", &pairs);
        let s = serialize(&r, 12, true);
        assert_eq!(s.text.matches('H').count(), 12);
        assert!(s.text.contains("H11"));
        assert!(!s.text.contains("H12"));
    }

    #[test]
    fn serialization_is_deterministic_and_order_sensitive() {
        let a = record(0, "b", &[("X", "1"), ("Y", "2")]);
        let b = record(0, "b", &[("Y", "2"), ("X", "1")]);
        assert_eq!(serialize(&a, 12, true), serialize(&a, 12, true));
        assert_ne!(serialize(&a, 12, true).text, serialize(&b, 12, true).text);
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let r = record(0, "book.xlsx::s", &[("A", "1"), ("B", "2")]);
        let z1 = embed_record(&r, &params);
        let z2 = embed_record(&r, &params);
        assert_eq!(z1, z2);
        assert!((crate::matrix::l2_norm(&z1) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn tokens_are_whitespace_canonical_but_name_sensitive() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        // trailing whitespace is trimmed away before tokenization
        let a = record(0, "book", &[("Alpha", "x")]);
        let b = record(0, "book ", &[("Alpha ", " x ")]);
        let za = embed_record(&a, &params);
        let zb = embed_record(&b, &params);
        assert_eq!(za, zb);

        let mut distinct = 0;
        for i in 0..50u32 {
            let r1 = record(0, &format!("book_{i}"), &[("A", "1"), ("B", "2")]);
            let r2 = record(0, &format!("book_{}", i + 1000), &[("A", "1"), ("B", "2")]);
            let c = crate::matrix::cosine(&embed_record(&r1, &params), &embed_record(&r2, &params));
            if c < 1.0 - 1e-9 {
                distinct += 1;
            }
        }
        assert!(distinct >= 49, "names barely affect tokens: {distinct}/50");
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let cfg = small_cfg();
        let mut params = EncoderParams::init(&cfg);
        params.head_w1 = Matrix::zeros(4 * cfg.dim, cfg.dim);
        params.head_w2 = Matrix::zeros(cfg.dim, 2);
        let z1 = vec![1.0 / (cfg.dim as f64).sqrt(); cfg.dim];
        let logits = pair_logits(&z1, &z1, &params);
        assert_eq!(logits, [0.0, 0.0]);
        assert_eq!(match_probability(&logits), 0.5);
    }

    #[test]
    fn smoothed_ce_frozen_values() {
        // uniform prediction: ln 2 for any label and alpha
        for &alpha in &[0.0, 0.1, 0.3] {
            for &label in &[false, true] {
                let loss = smoothed_ce(&[0.0, 0.0], label, alpha);
                assert!((loss - core::f64::consts::LN_2).abs() <= 1e-12);
            }
        }
        // alpha = 0 reduces to plain CE and vanishes as p_label -> 1
        let confident = smoothed_ce(&[-20.0, 20.0], true, 0.0);
        assert!(confident < 1e-12);
        // independently evaluated: p = [0.9, 0.1], label 1, alpha 0.2:
        // -(0.8) ln 0.1 - 0.1 (ln 0.9 + ln 0.1) = 2.082862635260424
        let logits = [0.9f64.ln(), 0.1f64.ln()];
        let loss = smoothed_ce(&logits, true, 0.2);
        assert!((loss - 2.082862635260424).abs() <= 1e-12, "{loss}");
    }

    #[test]
    fn training_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let r1 = record(0, "alpha_book", &[("Vendor", "acme"), ("Total", "12.5")]);
        let r2 = record(1, "beta_book", &[("Supplier", "zenith"), ("Sum", "99")]);
        let c1 = feature_counts(&serialize(&r1, 12, true).text, cfg.hash_buckets);
        let c2 = feature_counts(&serialize(&r2, 12, true).text, cfg.hash_buckets);

        let loss_with = |p: &EncoderParams| -> f64 {
            let mut tape = Tape::new();
            let dense = register_dense(&mut tape, p);
            let p1 = tape.leaf(pooled_vector(&c1, p));
            let p2 = tape.leaf(pooled_vector(&c2, p));
            let l = taped_pair_loss(&mut tape, &dense, p1, p2, true, 0.1);
            tape.value(l).scalar()
        };

        let mut tape = Tape::new();
        let dense = register_dense(&mut tape, &params);
        let p1 = tape.leaf(pooled_vector(&c1, &params));
        let p2 = tape.leaf(pooled_vector(&c2, &params));
        let l = taped_pair_loss(&mut tape, &dense, p1, p2, true, 0.1);
        let grads = tape.backward(l);

        // dense parameters
        let step = 1e-5;
        let names = ["proj_w1", "proj_b1", "proj_w2", "proj_b2", "head_w1", "head_b1", "head_w2", "head_b2"];
        for (pi, &var) in dense.vars.iter().enumerate() {
            let analytic = grads.get(var).unwrap().clone();
            let mut worst = 0.0f64;
            for i in 0..analytic.rows() {
                for j in 0..analytic.cols() {
                    let mut hi = params.clone();
                    let mut lo = params.clone();
                    {
                        let mut hip = dense_params_mut(&mut hi);
                        let v = hip[pi].get(i, j);
                        hip[pi].set(i, j, v + step);
                        let mut lop = dense_params_mut(&mut lo);
                        lop[pi].set(i, j, v - step);
                    }
                    let fd = (loss_with(&hi) - loss_with(&lo)) / (2.0 * step);
                    let a = analytic.get(i, j);
                    let denom = a.abs().max(fd.abs()).max(1e-4);
                    worst = worst.max((a - fd).abs() / denom);
                }
            }
            assert!(worst <= 1e-5, "{} rel err {}", names[pi], worst);
        }

        // embedding table entries, through the sparse-update formula; a
        // bucket touched by both records sums both contributions
        let g1 = grads.get(p1).unwrap();
        let g2 = grads.get(p2).unwrap();
        for (&bucket, &count) in c1.iter().take(5) {
            for j in [0usize, cfg.dim - 1] {
                let analytic = count as f64 * g1.get(0, j)
                    + c2.get(&bucket).copied().unwrap_or(0) as f64 * g2.get(0, j);
                let mut hi = params.clone();
                let v = hi.embedding.get(bucket as usize, j);
                hi.embedding.set(bucket as usize, j, v + step);
                let mut lo = params.clone();
                lo.embedding.set(bucket as usize, j, v - step);
                let fd = (loss_with(&hi) - loss_with(&lo)) / (2.0 * step);
                let denom = analytic.abs().max(fd.abs()).max(1e-4);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-5,
                    "table[{bucket},{j}]: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_learns_a_separable_toy_set() {
        use crate::record::SheetCatalog;
        // two workbook families with disjoint vocabulary
        let mut records = Vec::new();
        for i in 0..8u32 {
            let fam = if i % 2 == 0 { "ledger" } else { "payroll" };
            records.push(record(
                i,
                &format!("{fam}_book_{i}"),
                &[("Vendor", fam), ("Total", "10.0")],
            ));
        }
        let catalog = SheetCatalog::from_records(records).unwrap();
        let mut pairs = Vec::new();
        for i in (0..8u32).step_by(2) {
            pairs.push(PairExample::new(i, (i + 2) % 8, true).unwrap());
            pairs.push(PairExample::new(i, i + 1, false).unwrap());
        }
        let cfg = EncoderConfig {
            epochs: 40,
            learning_rate: 0.02,
            batch_size: 2,
            ..small_cfg()
        };
        let (p1, log1) = train_encoder(&catalog, &pairs, &pairs, &cfg).unwrap();
        let (p2, log2) = train_encoder(&catalog, &pairs, &pairs, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(log1, log2);
        assert!(p1.is_finite());
        let last = log1.split(Split::Eval).last().unwrap();
        assert!(last.accuracy >= 0.75, "toy accuracy {}", last.accuracy);
    }

    #[test]
    fn encode_catalog_round_trips_dimensions() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let catalog = SheetCatalog::from_records(vec![
            record(0, "a", &[("A", "1")]),
            record(3, "b", &[("B", "2")]),
        ])
        .unwrap();
        let cache = encode_catalog(&catalog, &params);
        assert_eq!(cache.len(), catalog.len());
        for (_, token) in cache.iter() {
            let norm: f64 = token.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-3);
        }
    }
}
