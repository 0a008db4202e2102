//! Stage 2: the query-conditioned graph retriever.
//!
//! For one query, the candidate sheets form a workspace graph. Four
//! adjacency channels are built from frozen Stage 1 tokens and record
//! metadata (semantic similarity, query-conditioned relevance, schema
//! consistency, shape compatibility), mixed per stage through learnable
//! softmax coefficients, and composed by matrix product into the propagation
//! operator. Graph convolution refines the node states, query-guided pooling
//! yields a set vector, and a node head scores each candidate.
//!
//! Training combines a contrastive set-retrieval loss over pooled subsets, a
//! positive/negative alignment margin, and node-level BCE. The shallow
//! baseline is this exact code path with two composition stages.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait methods back f64 math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoder::{embed_text, EncoderParams};
use crate::matrix::{cosine_guarded, dot, l2_norm, softmax, Matrix};
use crate::metrics::{listwise_accuracy, normalized_entropy, QueryDecisions, Split, TrainLog};
use crate::optim::Sgd;
use crate::record::{QueryInstance, SheetCatalog, SheetId, SheetRecord, TokenCache};

/// Number of adjacency channels; order is fixed:
/// `[semantic, query, schema, shape]`.
pub const NUM_CHANNELS: usize = 4;

/// Enhanced multi-stage retriever vs the shallow two-stage baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieverMode {
    Enhanced,
    Baseline,
}

impl RetrieverMode {
    pub fn stages(&self) -> usize {
        match self {
            RetrieverMode::Enhanced => 3,
            RetrieverMode::Baseline => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieverError {
    #[error("sheet {0} has zero rows or columns; shape channel undefined")]
    ZeroDimensionSheet(SheetId),
    #[error("no cached token for sheet {0}")]
    MissingToken(SheetId),
    #[error("empty candidate set")]
    EmptyWorkspace,
    #[error("workspace row {0} is not unit-norm")]
    NotUnitNorm(usize),
    #[error("workspace has no labels")]
    MissingLabels,
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("record error: {0}")]
    Record(#[from] crate::record::RecordError),
}

/// Trainable Stage 2 state plus its temperatures and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverParams {
    /// Composition stages T (enhanced 3, baseline 2).
    pub num_stages: usize,
    pub dim: usize,
    /// T x K mixing logits; softmax per row gives the stage coefficients.
    pub stage_logits: Matrix,
    /// Propagation weights, d x d each.
    pub gcn: Vec<Matrix>,
    /// Node head: affine over the four per-candidate graph features
    /// (query-node cosine, set-centered cosine, normalized composed-graph
    /// degree, normalized pooling weight), ReLU, affine d->1.
    pub head_w1: Matrix,
    pub head_b1: Matrix,
    pub head_w2: Matrix,
    pub head_b2: Matrix,
    pub tau_pool: f64,
    pub tau_ret: f64,
    pub lambda_align: f64,
    pub lambda_node: f64,
}

/// Propagation depth.
pub const GCN_LAYERS: usize = 2;

/// Global gradient-norm clip applied per batch during training.
pub const GRADIENT_CLIP_NORM: f64 = 5.0;

/// Per-candidate features the node head reads. All four are scalar
/// summaries of the candidate's standing in its own workspace (none expose
/// raw embedding coordinates, so the head cannot memorize particular sheets
/// or query vocabularies):
/// cos(z_q, h_i), cos(z_q, h_i - z_set), degree_i * m / sum(degree),
/// beta_i * m.
pub const NODE_FEATURES: usize = 4;

fn clip_gradients(grads: &mut [Option<Matrix>], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let scale = max_norm / total;
        for g in grads.iter_mut().flatten() {
            *g = g.scale(scale);
        }
    }
}

impl RetrieverParams {
    /// Initialization that approximates the identity map at step 0: uniform
    /// stage coefficients and near-identity propagation weights.
    pub fn init(mode: RetrieverMode, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn = (0..GCN_LAYERS)
            .map(|_| {
                let mut w = Matrix::randn(dim, dim, 0.01, &mut rng);
                for i in 0..dim {
                    let v = w.get(i, i);
                    w.set(i, i, v + 1.0);
                }
                w
            })
            .collect();
        RetrieverParams {
            num_stages: mode.stages(),
            dim,
            stage_logits: Matrix::zeros(mode.stages(), NUM_CHANNELS),
            gcn,
            head_w1: Matrix::randn(NODE_FEATURES, dim, 0.5, &mut rng),
            head_b1: Matrix::zeros(1, dim),
            head_w2: Matrix::randn(dim, 1, 1.0 / (dim as f64).sqrt(), &mut rng),
            head_b2: Matrix::zeros(1, 1),
            tau_pool: 1.0,
            tau_ret: 0.1,
            lambda_align: 0.5,
            lambda_node: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), RetrieverError> {
        if self.num_stages == 0 {
            return Err(RetrieverError::BadConfig("num_stages must be >= 1"));
        }
        if self.tau_pool <= 0.0 || self.tau_ret <= 0.0 {
            return Err(RetrieverError::BadConfig("temperatures must be positive"));
        }
        if self.lambda_align < 0.0 || self.lambda_node < 0.0 {
            return Err(RetrieverError::BadConfig("loss weights must be >= 0"));
        }
        if self.stage_logits.rows() != self.num_stages
            || self.stage_logits.cols() != NUM_CHANNELS
            || self.gcn.len() != GCN_LAYERS
        {
            return Err(RetrieverError::BadConfig("parameter shapes inconsistent"));
        }
        Ok(())
    }
}

/// One query's candidate graph inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub sheet_ids: Vec<SheetId>,
    /// Query embedding z_q.
    pub query_vec: Vec<f64>,
    /// m x d node initialization (rows are cached sheet tokens, unit-norm).
    pub node_init: Matrix,
    pub labels: Option<Vec<bool>>,
    pub records: Vec<SheetRecord>,
}

impl Workspace {
    pub fn new(
        query_vec: Vec<f64>,
        sheet_ids: Vec<SheetId>,
        catalog: &SheetCatalog,
        cache: &TokenCache,
        labels: Option<Vec<bool>>,
    ) -> Result<Self, RetrieverError> {
        if sheet_ids.is_empty() {
            return Err(RetrieverError::EmptyWorkspace);
        }
        let mut node_init = Matrix::zeros(sheet_ids.len(), cache.dim());
        let mut records = Vec::with_capacity(sheet_ids.len());
        for (i, &id) in sheet_ids.iter().enumerate() {
            let record = catalog
                .get(id)
                .ok_or(crate::record::RecordError::UnresolvableId(id))?;
            let token = cache
                .get_f64(id)
                .ok_or(RetrieverError::MissingToken(id))?;
            if (l2_norm(&token) - 1.0).abs() > 1e-3 {
                return Err(RetrieverError::NotUnitNorm(i));
            }
            node_init.row_mut(i).copy_from_slice(&token);
            records.push(record.clone());
        }
        if let Some(l) = &labels {
            assert_eq!(l.len(), sheet_ids.len(), "label length mismatch");
        }
        Ok(Workspace {
            sheet_ids,
            query_vec,
            node_init,
            labels,
            records,
        })
    }

    pub fn size(&self) -> usize {
        self.sheet_ids.len()
    }
}

/// The K primitive relation matrices over a workspace, entries in [0,1],
/// unit diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyChannels {
    pub size: usize,
    /// `[semantic, query, schema, shape]`
    pub channels: [Matrix; NUM_CHANNELS],
}

fn header_token_set(record: &SheetRecord) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for col in &record.columns {
        for token in col
            .header
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
        {
            if !token.is_empty() {
                set.insert(String::from(token));
            }
        }
    }
    set
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0 // two headerless sheets are schema-identical
    } else {
        inter as f64 / union as f64
    }
}

/// Builds the four adjacency priors from tokens and record metadata.
///
/// - semantic: `max(0, cos(z_i - mean, z_j - mean))` over
///   workspace-centered tokens; centering removes the vocabulary mass every
///   sheet shares and the rectification keeps unrelated pairs at 0, so the
///   stage products stay structured instead of collapsing to rank one
/// - query: `r_i r_j` with `r_i = clamp(cos(z_q, z_i) - mean_relevance, 0, 1)`,
///   a soft indicator of above-average relevance to this query
/// - schema: Jaccard similarity of normalized header token sets, after
///   dropping tokens that more than half the workspace shares (those carry
///   no discriminative schema information within this candidate set)
/// - shape: `exp(-(|ln(R_i/R_j)| + |ln(C_i/C_j)|))`
///
/// All entries lie in [0,1] and all diagonals are forced to 1.
pub fn build_channels(ws: &Workspace) -> Result<AdjacencyChannels, RetrieverError> {
    let m = ws.size();
    for (i, r) in ws.records.iter().enumerate() {
        if r.num_rows == 0 || r.num_cols == 0 {
            return Err(RetrieverError::ZeroDimensionSheet(ws.sheet_ids[i]));
        }
    }

    let mut semantic = Matrix::zeros(m, m);
    let mut query = Matrix::zeros(m, m);
    let mut schema = Matrix::zeros(m, m);
    let mut shape = Matrix::zeros(m, m);

    let d = ws.node_init.cols();
    let mut mean_token = vec![0.0; d];
    for i in 0..m {
        for (o, &v) in mean_token.iter_mut().zip(ws.node_init.row(i)) {
            *o += v / m as f64;
        }
    }
    let centered: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            ws.node_init
                .row(i)
                .iter()
                .zip(&mean_token)
                .map(|(&v, &mu)| v - mu)
                .collect()
        })
        .collect();

    let raw_relevance: Vec<f64> = (0..m)
        .map(|i| cosine_guarded(&ws.query_vec, ws.node_init.row(i)))
        .collect();
    let mean_relevance = raw_relevance.iter().sum::<f64>() / m as f64;
    let relevance: Vec<f64> = raw_relevance
        .iter()
        .map(|&r| (r - mean_relevance).clamp(0.0, 1.0))
        .collect();
    let full_sets: Vec<BTreeSet<String>> = ws.records.iter().map(header_token_set).collect();
    let mut common: alloc::collections::BTreeMap<&String, usize> = alloc::collections::BTreeMap::new();
    for set in &full_sets {
        for token in set {
            *common.entry(token).or_insert(0) += 1;
        }
    }
    let ubiquitous: BTreeSet<&String> = common
        .iter()
        .filter(|(_, &count)| 2 * count > m)
        .map(|(&token, _)| token)
        .collect();
    let token_sets: Vec<BTreeSet<String>> = full_sets
        .iter()
        .map(|set| {
            set.iter()
                .filter(|t| !ubiquitous.contains(t))
                .cloned()
                .collect()
        })
        .collect();

    for i in 0..m {
        for j in 0..m {
            if i == j {
                semantic.set(i, j, 1.0);
                query.set(i, j, 1.0);
                schema.set(i, j, 1.0);
                shape.set(i, j, 1.0);
                continue;
            }
            let cos = cosine_guarded(&centered[i], &centered[j]);
            semantic.set(i, j, cos.max(0.0));
            query.set(i, j, relevance[i] * relevance[j]);
            schema.set(i, j, jaccard(&token_sets[i], &token_sets[j]));
            let ri = ws.records[i].num_rows as f64;
            let rj = ws.records[j].num_rows as f64;
            let ci = ws.records[i].num_cols as f64;
            let cj = ws.records[j].num_cols as f64;
            shape.set(i, j, (-((ri / rj).ln().abs() + (ci / cj).ln().abs())).exp());
        }
    }

    Ok(AdjacencyChannels {
        size: m,
        channels: [semantic, query, schema, shape],
    })
}

/// Mixes the channels per stage with softmax coefficients and composes the
/// stages by matrix product: `A_comp = A^(1) * A^(2) * ... * A^(T)`.
pub fn compose_adjacency(ch: &AdjacencyChannels, params: &RetrieverParams) -> Matrix {
    assert!(params.num_stages >= 1);
    let mut composed: Option<Matrix> = None;
    for t in 0..params.num_stages {
        let pi = softmax(params.stage_logits.row(t), 1.0);
        let mut mixed = Matrix::zeros(ch.size, ch.size);
        for (k, a) in ch.channels.iter().enumerate() {
            mixed.add_scaled_assign(a, pi[k]);
        }
        composed = Some(match composed {
            None => mixed,
            Some(prev) => prev.matmul(&mixed),
        });
    }
    composed.expect("at least one stage")
}

/// Graph convolution over the normalized composed adjacency:
/// `Abar = row_normalize(A_comp + I)`, `H <- ReLU(Abar H W)` per layer.
pub fn propagate(a_comp: &Matrix, ws: &Workspace, params: &RetrieverParams) -> Matrix {
    let m = ws.size();
    let abar = a_comp.add(&Matrix::identity(m)).row_normalize();
    let mut h = ws.node_init.clone();
    for w in &params.gcn {
        h = abar.matmul(&h).matmul(w).map(|v| v.max(0.0));
    }
    h
}

/// Query-guided pooling: `s_i = (z_q . h_i)/tau`, `beta = softmax(s)`,
/// `z_set = sum_i beta_i h_i`.
pub fn pool(z_q: &[f64], h: &Matrix, tau_pool: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(tau_pool > 0.0, "pooling temperature must be positive");
    let scores: Vec<f64> = (0..h.rows()).map(|i| dot(z_q, h.row(i)) / tau_pool).collect();
    let beta = softmax(&scores, 1.0);
    let mut z_set = vec![0.0; h.cols()];
    for (i, &b) in beta.iter().enumerate() {
        for (o, &v) in z_set.iter_mut().zip(h.row(i)) {
            *o += b * v;
        }
    }
    (beta, z_set)
}

/// Per-candidate membership probabilities from the node head.
///
/// The head reads two relational feature blocks per candidate: the raw
/// query interaction `h_i (.) z_q` and the set-centered interaction
/// `(h_i - z_set) (.) z_q`, where `z_set` is the query-guided pooling of the
/// whole workspace. Centering on the pooled set expresses the candidate's
/// relevance relative to its own workspace, which is what transfers to
/// queries never seen in training; identity blocks (`h_i`, `z_q` alone) are
/// deliberately absent so the head cannot shortcut into memorizing
/// particular sheets or queries.
pub fn node_scores(z_q: &[f64], h: &Matrix, params: &RetrieverParams) -> Vec<f64> {
    node_logits_features(z_q, h, None, params)
        .0
        .into_iter()
        .map(sigmoid)
        .collect()
}

/// Node-head logits plus the feature matrix; `a_comp` supplies the degree
/// feature (workspaces without it fall back to uniform degree, used only by
/// unit tests).
fn node_logits_features(
    z_q: &[f64],
    h: &Matrix,
    a_comp: Option<&Matrix>,
    params: &RetrieverParams,
) -> (Vec<f64>, Matrix) {
    let m = h.rows();
    let d = h.cols();
    let (beta, z_set) = pool(z_q, h, params.tau_pool);
    let degrees: Vec<f64> = match a_comp {
        Some(a) => {
            let sums: Vec<f64> = (0..m).map(|i| a.row(i).iter().sum()).collect();
            let total: f64 = sums.iter().sum();
            sums.iter().map(|&s| s * m as f64 / total).collect()
        }
        None => vec![1.0; m],
    };
    let mut x = Matrix::zeros(m, NODE_FEATURES);
    let mut centered_row = vec![0.0; d];
    for i in 0..m {
        for (j, c) in centered_row.iter_mut().enumerate() {
            *c = h.get(i, j) - z_set[j];
        }
        x.set(i, 0, cosine_guarded(z_q, h.row(i)));
        x.set(i, 1, cosine_guarded(z_q, &centered_row));
        x.set(i, 2, degrees[i]);
        x.set(i, 3, beta[i] * m as f64);
    }
    let hid = x
        .matmul(&params.head_w1)
        .add_broadcast(&params.head_b1)
        .map(|v| v.max(0.0));
    let logits = hid.matmul(&params.head_w2).add_broadcast(&params.head_b2);
    (logits.data().to_vec(), x)
}

/// Per-candidate probabilities with the full feature set (degree included).
pub fn node_scores_full(
    z_q: &[f64],
    h: &Matrix,
    a_comp: &Matrix,
    params: &RetrieverParams,
) -> Vec<f64> {
    node_logits_features(z_q, h, Some(a_comp), params)
        .0
        .into_iter()
        .map(sigmoid)
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Matrix {
    /// Broadcast-add of a 1 x C row to every row.
    fn add_broadcast(&self, bias: &Matrix) -> Matrix {
        assert_eq!(bias.rows(), 1);
        assert_eq!(bias.cols(), self.cols());
        let mut out = self.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bias.row(0)) {
                *o += b;
            }
        }
        out
    }
}

/// Contrastive set-retrieval loss: `-log softmax(sim(z_q, z_set^(b))/tau)`
/// at the positive index. Exactly zero for a single set.
pub fn retrieval_loss(z_q: &[f64], sets: &[Vec<f64>], positive: usize, tau_ret: f64) -> f64 {
    assert!(!sets.is_empty(), "need at least one candidate set");
    assert!(positive < sets.len(), "positive index out of range");
    assert!(tau_ret > 0.0);
    let sims: Vec<f64> = sets
        .iter()
        .map(|s| {
            let n = l2_norm(s);
            assert!(n > 0.0, "zero-norm set vector");
            cosine_guarded(z_q, s) / tau_ret
        })
        .collect();
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = sims.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    lse - sims[positive]
}

/// Margin between mean query-positive and query-negative node similarity:
/// `1 - mean_P cos + max(0, mean_N cos)`.
pub fn alignment_loss(z_q: &[f64], h: &Matrix, positives: &[usize], negatives: &[usize]) -> f64 {
    assert!(!positives.is_empty(), "empty positive set");
    assert!(!negatives.is_empty(), "empty negative set");
    let mean = |idx: &[usize]| {
        idx.iter()
            .map(|&i| cosine_guarded(z_q, h.row(i)))
            .sum::<f64>()
            / idx.len() as f64
    };
    1.0 - mean(positives) + mean(negatives).max(0.0)
}

/// Mean binary cross-entropy of node probabilities, clamped at 1e-12.
pub fn node_loss(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "length mismatch");
    assert!(!scores.is_empty());
    let sum: f64 = scores
        .iter()
        .zip(labels.iter())
        .map(|(&p, &y)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    sum / scores.len() as f64
}

/// `L = L_ret + lambda_align L_align + lambda_node L_node`.
pub fn total_loss(l_ret: f64, l_align: f64, l_node: f64, params: &RetrieverParams) -> f64 {
    l_ret + params.lambda_align * l_align + params.lambda_node * l_node
}

/// A query with everything precomputed that does not depend on Stage 2
/// parameters: workspace, channels, positive/negative index lists.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub workspace: Workspace,
    pub channels: AdjacencyChannels,
    pub pos_idx: Vec<usize>,
    pub neg_idx: Vec<usize>,
}

impl PreparedQuery {
    /// Positions are derived from the workspace labels.
    pub fn from_workspace(workspace: Workspace) -> Result<Self, RetrieverError> {
        let labels = workspace
            .labels
            .as_ref()
            .ok_or(RetrieverError::MissingLabels)?;
        let pos_idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| l.then_some(i))
            .collect();
        let neg_idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (!l).then_some(i))
            .collect();
        let channels = build_channels(&workspace)?;
        Ok(PreparedQuery {
            workspace,
            channels,
            pos_idx,
            neg_idx,
        })
    }

    pub fn from_query(
        q: &QueryInstance,
        catalog: &SheetCatalog,
        cache: &TokenCache,
        encoder: &EncoderParams,
    ) -> Result<Self, RetrieverError> {
        let ids = q.candidates();
        let labels: Vec<bool> = ids.iter().map(|id| q.positives.contains(id)).collect();
        let z_q = embed_text(&q.query, encoder);
        let ws = Workspace::new(z_q, ids, catalog, cache, Some(labels))?;
        Self::from_workspace(ws)
    }
}

/// Parameter leaves on a training tape, in optimizer order; the temperatures
/// are leaves (their gradients exist) but are not updated.
struct TapedRetriever {
    stage_logits: Var,
    gcn: Vec<Var>,
    head_w1: Var,
    head_b1: Var,
    head_w2: Var,
    head_b2: Var,
    tau_pool: Var,
    tau_ret: Var,
}

fn register_params(tape: &mut Tape, p: &RetrieverParams) -> TapedRetriever {
    TapedRetriever {
        stage_logits: tape.leaf(p.stage_logits.clone()),
        gcn: p.gcn.iter().map(|w| tape.leaf(w.clone())).collect(),
        head_w1: tape.leaf(p.head_w1.clone()),
        head_b1: tape.leaf(p.head_b1.clone()),
        head_w2: tape.leaf(p.head_w2.clone()),
        head_b2: tape.leaf(p.head_b2.clone()),
        tau_pool: tape.leaf(Matrix::from_vec(1, 1, vec![p.tau_pool])),
        tau_ret: tape.leaf(Matrix::from_vec(1, 1, vec![p.tau_ret])),
    }
}

struct TapedForward {
    /// Refined node states H^(L).
    h: Var,
    /// m x 1 node-head logits.
    node_logits: Var,
    /// Pooled set vectors over the positive / negative subsets.
    pos_set: Var,
    neg_set: Var,
    /// Query vector as a tape constant.
    zq: Var,
}

/// Builds one query's graph on the tape: channel mixing, composition,
/// propagation, subset pooling, node head.
fn taped_forward(tape: &mut Tape, tp: &TapedRetriever, q: &PreparedQuery) -> TapedForward {
    let m = q.workspace.size();

    let channel_vars: Vec<Var> = q
        .channels
        .channels
        .iter()
        .map(|c| tape.constant(c.clone()))
        .collect();
    let h0 = tape.constant(q.workspace.node_init.clone());
    let zq = tape.constant(Matrix::row_vector(q.workspace.query_vec.clone()));
    let identity = tape.constant(Matrix::identity(m));

    // stage mixing and composition
    let pis = tape.row_softmax(tp.stage_logits);
    let mut composed: Option<Var> = None;
    for t in 0..tape.value(tp.stage_logits).rows() {
        let mut mixed: Option<Var> = None;
        for (k, &ch) in channel_vars.iter().enumerate() {
            let pi_tk = tape.select_elem(pis, t, k);
            let scaled = tape.mul_scalar(ch, pi_tk);
            mixed = Some(match mixed {
                None => scaled,
                Some(acc) => tape.add(acc, scaled),
            });
        }
        let mixed = mixed.expect("at least one channel");
        composed = Some(match composed {
            None => mixed,
            Some(acc) => tape.matmul(acc, mixed),
        });
    }
    let a_comp = composed.expect("at least one stage");
    let with_loops = tape.add(a_comp, identity);
    let abar = tape.row_normalize(with_loops);

    // propagation
    let mut h = h0;
    for &w in &tp.gcn {
        let ah = tape.matmul(abar, h);
        let ahw = tape.matmul(ah, w);
        h = tape.relu(ahw);
    }

    // pooled set vectors: positives-only, negatives-only, full workspace
    let pool_over = |tape: &mut Tape, hs: Var| -> (Var, Var) {
        let scores = tape.matmul_bt(zq, hs);
        let scaled = tape.div_scalar(scores, tp.tau_pool);
        let beta = tape.row_softmax(scaled);
        (beta, tape.matmul(beta, hs))
    };
    let pos_rows = tape.select_rows(h, &q.pos_idx);
    let (_, pos_set) = pool_over(tape, pos_rows);
    let neg_rows = tape.select_rows(h, &q.neg_idx);
    let (_, neg_set) = pool_over(tape, neg_rows);
    let (full_beta, full_set) = pool_over(tape, h);

    // node head: the four per-candidate scalar summaries
    let set_rep = tape.repeat_rows(full_set, m);
    let centered = tape.sub(h, set_rep);
    let cos_cols: Vec<Var> = (0..m)
        .map(|i| {
            let row = tape.select_rows(h, &[i]);
            tape.cosine(zq, row)
        })
        .collect();
    let cos_col = tape.concat_rows(&cos_cols);
    let cos_centered_cols: Vec<Var> = (0..m)
        .map(|i| {
            let row = tape.select_rows(centered, &[i]);
            tape.cosine(zq, row)
        })
        .collect();
    let cos_centered_col = tape.concat_rows(&cos_centered_cols);
    // normalized degree of the composed graph
    let ones = tape.constant(Matrix::from_vec(m, 1, vec![1.0; m]));
    let deg = tape.matmul(a_comp, ones);
    let total = tape.sum_all(deg);
    let deg_frac = tape.div_scalar(deg, total);
    let deg_col = tape.scale_const(deg_frac, m as f64);
    // normalized pooling weight over the full workspace
    let beta_col = tape.transpose(full_beta);
    let beta_scaled = tape.scale_const(beta_col, m as f64);
    let x = tape.concat_cols(&[cos_col, cos_centered_col, deg_col, beta_scaled]);
    let xw = tape.matmul(x, tp.head_w1);
    let xwb = tape.add_bias_row(xw, tp.head_b1);
    let hid = tape.relu(xwb);
    let lw = tape.matmul(hid, tp.head_w2);
    let node_logits = tape.add_bias_row(lw, tp.head_b2);

    TapedForward {
        h,
        node_logits,
        pos_set,
        neg_set,
        zq,
    }
}

/// Assembles the taped composite loss for a batch of queries. The InfoNCE
/// denominator for query `q` holds its positive-set pooling, optionally its
/// own negative-set pooling, and the positive-set poolings of the other
/// queries in the batch.
fn taped_batch_loss(
    tape: &mut Tape,
    tp: &TapedRetriever,
    queries: &[&PreparedQuery],
    own_negative: bool,
    params: &RetrieverParams,
) -> Var {
    let forwards: Vec<TapedForward> = queries.iter().map(|q| taped_forward(tape, tp, q)).collect();
    let mut losses = Vec::with_capacity(queries.len());
    for (qi, (q, fwd)) in queries.iter().zip(&forwards).enumerate() {
        // contrastive sets: own positive first, target index 0
        let mut sims = Vec::new();
        let own_pos = tape.cosine(fwd.zq, fwd.pos_set);
        sims.push(own_pos);
        if own_negative {
            sims.push(tape.cosine(fwd.zq, fwd.neg_set));
        }
        for (oi, other) in forwards.iter().enumerate() {
            if oi != qi {
                sims.push(tape.cosine(fwd.zq, other.pos_set));
            }
        }
        let row = tape.concat_cols(&sims);
        let scaled = tape.div_scalar(row, tp.tau_ret);
        let l_ret = tape.smoothed_ce_logits(scaled, 0, 0.0);

        // alignment margin
        let mean_cos = |tape: &mut Tape, idx: &[usize]| -> Var {
            let sims: Vec<Var> = idx
                .iter()
                .map(|&i| {
                    let row = tape.select_rows(fwd.h, &[i]);
                    tape.cosine(fwd.zq, row)
                })
                .collect();
            let cat = tape.concat_cols(&sims);
            tape.mean_all(cat)
        };
        let s_pos = mean_cos(tape, &q.pos_idx);
        let s_neg = mean_cos(tape, &q.neg_idx);
        let s_neg_clip = tape.relu(s_neg);
        let margin = tape.sub(s_neg_clip, s_pos);
        let l_align = tape.add_const(margin, 1.0);

        // node-level BCE
        let targets: Vec<f64> = q
            .workspace
            .labels
            .as_ref()
            .expect("prepared queries carry labels")
            .iter()
            .map(|&l| f64::from(u8::from(l)))
            .collect();
        let l_node = tape.bce_with_logits_mean(fwd.node_logits, &targets);

        let align_scaled = tape.scale_const(l_align, params.lambda_align);
        let node_scaled = tape.scale_const(l_node, params.lambda_node);
        let partial = tape.add(l_ret, align_scaled);
        losses.push(tape.add(partial, node_scaled));
    }
    let cat = tape.concat_cols(&losses);
    tape.mean_all(cat)
}

/// Composite batch loss as a plain value; the reference path for gradient
/// checks and the training loop alike.
pub fn batch_loss_value(
    params: &RetrieverParams,
    queries: &[&PreparedQuery],
    own_negative: bool,
) -> f64 {
    let mut tape = Tape::new();
    let tp = register_params(&mut tape, params);
    let loss = taped_batch_loss(&mut tape, &tp, queries, own_negative, params);
    tape.value(loss).scalar()
}

/// Analytic gradients of the composite batch loss for every parameter leaf,
/// in the order: stage_logits, gcn layers, head (w1, b1, w2, b2), tau_pool,
/// tau_ret.
pub fn batch_loss_gradients(
    params: &RetrieverParams,
    queries: &[&PreparedQuery],
    own_negative: bool,
) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let tp = register_params(&mut tape, params);
    let loss = taped_batch_loss(&mut tape, &tp, queries, own_negative, params);
    let grads = tape.backward(loss);
    let mut leaves = vec![tp.stage_logits];
    leaves.extend(&tp.gcn);
    leaves.extend([tp.head_w1, tp.head_b1, tp.head_w2, tp.head_b2, tp.tau_pool, tp.tau_ret]);
    let out = leaves
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| {
                    let m = tape.value(v);
                    Matrix::zeros(m.rows(), m.cols())
                })
        })
        .collect();
    (tape.value(loss).scalar(), out)
}

/// Stage 2 training knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Include the query's own negative-set pooling in the InfoNCE
    /// denominator. With this off and batch size 1 the retrieval loss is
    /// identically zero and training is a no-op.
    pub own_negative_in_denominator: bool,
}

impl Default for RetrieverTrainConfig {
    fn default() -> Self {
        RetrieverTrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.1,
            seed: 0,
            own_negative_in_denominator: true,
        }
    }
}

/// Trains the retriever on frozen Stage 1 tokens.
pub fn train_retriever(
    catalog: &SheetCatalog,
    cache: &TokenCache,
    encoder: &EncoderParams,
    queries_train: &[QueryInstance],
    queries_eval: &[QueryInstance],
    params_init: RetrieverParams,
    cfg: &RetrieverTrainConfig,
) -> Result<(RetrieverParams, TrainLog), RetrieverError> {
    params_init.validate()?;
    if queries_train.is_empty() || queries_eval.is_empty() {
        return Err(RetrieverError::BadConfig("empty query split"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(RetrieverError::BadConfig("zero-sized configuration field"));
    }

    let prepare = |qs: &[QueryInstance]| -> Result<Vec<PreparedQuery>, RetrieverError> {
        qs.iter()
            .map(|q| PreparedQuery::from_query(q, catalog, cache, encoder))
            .collect()
    };
    let train = prepare(queries_train)?;
    let eval = prepare(queries_eval)?;

    let mut params = params_init;
    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let velocities: Vec<&Matrix> = {
        let mut v: Vec<&Matrix> = vec![&params.stage_logits];
        v.extend(params.gcn.iter());
        v.extend([&params.head_w1, &params.head_b1, &params.head_w2, &params.head_b2]);
        v
    };
    let mut opt = Sgd::new(0.9, &velocities);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate * (1.0 - (epoch - 1) as f64 / cfg.epochs as f64);
        order.shuffle(&mut rng);

        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let tp = register_params(&mut tape, &params);
            let selected: Vec<&PreparedQuery> = batch.iter().map(|&i| &train[i]).collect();
            let loss = taped_batch_loss(
                &mut tape,
                &tp,
                &selected,
                cfg.own_negative_in_denominator,
                &params,
            );
            if !tape.value(loss).scalar().is_finite() {
                return Err(RetrieverError::Diverged { epoch });
            }
            let grads = tape.backward(loss);

            let mut leaf_vars = vec![tp.stage_logits];
            leaf_vars.extend(&tp.gcn);
            leaf_vars.extend([tp.head_w1, tp.head_b1, tp.head_w2, tp.head_b2]);
            let mut grad_mats: Vec<Option<Matrix>> =
                leaf_vars.iter().map(|&v| grads.get(v).cloned()).collect();
            clip_gradients(&mut grad_mats, GRADIENT_CLIP_NORM);
            let grad_refs: Vec<Option<&Matrix>> = grad_mats.iter().map(Option::as_ref).collect();

            let mut leaves: Vec<&mut Matrix> = vec![&mut params.stage_logits];
            leaves.extend(params.gcn.iter_mut());
            leaves.extend([
                &mut params.head_w1,
                &mut params.head_b1,
                &mut params.head_w2,
                &mut params.head_b2,
            ]);
            opt.step(&mut leaves, &grad_refs, lr);
        }

        let finite = params.stage_logits.is_finite()
            && params.gcn.iter().all(Matrix::is_finite)
            && params.head_w1.is_finite()
            && params.head_b1.is_finite()
            && params.head_w2.is_finite()
            && params.head_b2.is_finite();
        if !finite {
            return Err(RetrieverError::Diverged { epoch });
        }

        let (train_acc, train_ent) = evaluate_queries(&params, &train);
        let (eval_acc, eval_ent) = evaluate_queries(&params, &eval);
        log.push(epoch, Split::Train, train_acc.per_candidate, train_ent);
        log.push(epoch, Split::Eval, eval_acc.per_candidate, eval_ent);
    }

    Ok((params, log))
}

/// Listwise accuracy (per-candidate primary, exact-set secondary) and
/// normalized entropy of a parameter set over prepared queries.
pub fn evaluate_queries(
    params: &RetrieverParams,
    queries: &[PreparedQuery],
) -> (crate::metrics::ListwiseAccuracy, f64) {
    let mut decisions = Vec::with_capacity(queries.len());
    let mut confidences = Vec::new();
    for q in queries {
        let scores = forward_scores(params, q);
        let labels = q.workspace.labels.clone().expect("labels present");
        confidences.extend(scores.iter().copied());
        decisions.push(QueryDecisions {
            predicted: scores.iter().map(|&s| s >= 0.5).collect(),
            labels,
        });
    }
    (
        listwise_accuracy(&decisions),
        normalized_entropy(&confidences),
    )
}

/// Value-level forward pass to per-candidate probabilities.
pub fn forward_scores(params: &RetrieverParams, q: &PreparedQuery) -> Vec<f64> {
    let a_comp = compose_adjacency(&q.channels, params);
    let h = propagate(&a_comp, &q.workspace, params);
    node_scores_full(&q.workspace.query_vec, &h, &a_comp, params)
}

/// How `retrieve` turns scores into the predicted set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    TopK(usize),
    Threshold(f64),
}

/// One query's scored and ranked workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Workspace order (ascending sheet_id).
    pub sheet_ids: Vec<SheetId>,
    /// Per-candidate membership probabilities, workspace order.
    pub node_scores: Vec<f64>,
    /// Query-guided pooling weights over the full workspace.
    pub pooling_weights: Vec<f64>,
    /// Pooled set vector.
    pub set_vec: Vec<f64>,
    /// Permutation of workspace positions by score descending, sheet_id
    /// ascending on ties.
    pub ranking: Vec<usize>,
    /// Predicted membership under the requested selection rule.
    pub selected: Vec<bool>,
}

impl RetrievalResult {
    pub fn ranked_ids(&self) -> Vec<SheetId> {
        self.ranking.iter().map(|&i| self.sheet_ids[i]).collect()
    }
}

/// Scores candidates for a query text against the catalog.
///
/// The query is embedded through the frozen encoder backend (raw text, no
/// template); the workspace is the whole catalog unless `candidates` narrows
/// it.
pub fn retrieve(
    query_text: &str,
    catalog: &SheetCatalog,
    cache: &TokenCache,
    encoder: &EncoderParams,
    params: &RetrieverParams,
    candidates: Option<&[SheetId]>,
    selection: Selection,
) -> Result<RetrievalResult, RetrieverError> {
    params.validate()?;
    let ids: Vec<SheetId> = match candidates {
        Some(c) => {
            let mut ids = c.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
        None => catalog.ids().collect(),
    };
    if ids.is_empty() {
        return Err(RetrieverError::EmptyWorkspace);
    }
    let z_q = embed_text(query_text, encoder);
    let ws = Workspace::new(z_q, ids, catalog, cache, None)?;
    let channels = build_channels(&ws)?;
    let a_comp = compose_adjacency(&channels, params);
    let h = propagate(&a_comp, &ws, params);
    let (beta, z_set) = pool(&ws.query_vec, &h, params.tau_pool);
    let scores = node_scores_full(&ws.query_vec, &h, &a_comp, params);

    let mut ranking: Vec<usize> = (0..ws.size()).collect();
    ranking.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then(ws.sheet_ids[a].cmp(&ws.sheet_ids[b]))
    });

    let selected = match selection {
        Selection::Threshold(t) => scores.iter().map(|&s| s >= t).collect(),
        Selection::TopK(k) => {
            let mut sel = vec![false; ws.size()];
            for &i in ranking.iter().take(k) {
                sel[i] = true;
            }
            sel
        }
    };

    Ok(RetrievalResult {
        sheet_ids: ws.sheet_ids,
        node_scores: scores,
        pooling_weights: beta,
        set_vec: z_set,
        ranking,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ColumnMeta;
    use alloc::format;
    use alloc::string::ToString;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn test_record(id: SheetId, headers: &[&str], rows: u32, cols_override: Option<u32>) -> SheetRecord {
        SheetRecord {
            sheet_id: id,
            source_name: format!("book_{id}"),
            num_rows: rows,
            num_cols: cols_override.unwrap_or(headers.len() as u32),
            columns: headers
                .iter()
                .map(|h| ColumnMeta {
                    header: h.to_string(),
                    example: "x".to_string(),
                })
                .collect(),
        }
    }

    /// Random labeled workspace with unit tokens.
    fn random_workspace(m: usize, d: usize, seed: u64) -> PreparedQuery {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut node_init = Matrix::zeros(m, d);
        for i in 0..m {
            let row = unit(Matrix::randn(1, d, 1.0, &mut rng).data().to_vec());
            node_init.row_mut(i).copy_from_slice(&row);
        }
        let query_vec = unit(Matrix::randn(1, d, 1.0, &mut rng).data().to_vec());
        let header_pool = [
            ["alpha", "beta"].as_slice(),
            ["beta", "gamma"].as_slice(),
            ["delta"].as_slice(),
        ];
        let records: Vec<SheetRecord> = (0..m)
            .map(|i| {
                test_record(
                    i as SheetId,
                    header_pool[i % header_pool.len()],
                    (10 + 3 * i) as u32,
                    None,
                )
            })
            .collect();
        let labels: Vec<bool> = (0..m).map(|i| i % 2 == 0).collect();
        let ws = Workspace {
            sheet_ids: (0..m as SheetId).collect(),
            query_vec,
            node_init,
            labels: Some(labels),
            records,
        };
        PreparedQuery::from_workspace(ws).unwrap()
    }

    #[test]
    fn channel_extremes() {
        let q = random_workspace(3, 8, 1);
        let mut ws = q.workspace;
        // make node 1 identical to node 0
        let row0 = ws.node_init.row(0).to_vec();
        ws.node_init.row_mut(1).copy_from_slice(&row0);
        // identical header sets for 0 and 1, disjoint for 2
        ws.records[0] = test_record(0, &["alpha", "beta"], 10, None);
        ws.records[1] = test_record(1, &["Beta", "ALPHA"], 10, None);
        ws.records[2] = test_record(2, &["omega", "psi"], 20, None);
        let ch = build_channels(&ws).unwrap();
        let [sem, _qry, sch, shp] = &ch.channels;
        assert!((sem.get(0, 1) - 1.0).abs() <= 1e-12);
        assert!((sch.get(0, 1) - 1.0).abs() <= 1e-12);
        assert_eq!(sch.get(0, 2), 0.0);
        // shapes: rows 10 vs 20, same cols -> exp(-ln 2) = 0.5
        assert!((shp.get(0, 2) - 0.5).abs() <= 1e-12);
        assert!((shp.get(0, 1) - 1.0).abs() <= 1e-12);
        for c in &ch.channels {
            for i in 0..3 {
                assert_eq!(c.get(i, i), 1.0);
                for j in 0..3 {
                    let v = c.get(i, j);
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn zero_row_sheet_is_rejected() {
        let q = random_workspace(2, 4, 2);
        let mut ws = q.workspace;
        ws.records[1].num_rows = 0;
        assert_eq!(
            build_channels(&ws).unwrap_err(),
            RetrieverError::ZeroDimensionSheet(1)
        );
    }

    #[test]
    fn one_hot_stages_reduce_to_literal_channel_products() {
        let q = random_workspace(4, 6, 3);
        let mut params = RetrieverParams::init(RetrieverMode::Baseline, 6, 0);
        // stage 0 -> channel 1, stage 1 -> channel 3 (logit 60 ~ exact one-hot)
        params.stage_logits = Matrix::zeros(2, NUM_CHANNELS);
        params.stage_logits.set(0, 1, 60.0);
        params.stage_logits.set(1, 3, 60.0);
        let composed = compose_adjacency(&q.channels, &params);
        let direct = q.channels.channels[1].matmul(&q.channels.channels[3]);
        for (a, b) in composed.data().iter().zip(direct.data()) {
            assert!((a - b).abs() <= 1e-12);
        }

        // single stage, one-hot -> the channel itself
        params.num_stages = 1;
        params.stage_logits = Matrix::zeros(1, NUM_CHANNELS);
        params.stage_logits.set(0, 2, 60.0);
        let composed = compose_adjacency(&q.channels, &params);
        for (a, b) in composed.data().iter().zip(q.channels.channels[2].data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn composition_matches_brute_force_oracle() {
        // independent evaluation: explicit softmax + explicit triple loop
        use rand::Rng;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(2..=5usize);
            let t = rng.random_range(1..=4usize);
            let q = random_workspace(m, 4, seed + 100);
            let mut params = RetrieverParams::init(RetrieverMode::Enhanced, 4, seed);
            params.num_stages = t;
            params.stage_logits = Matrix::randn(t, NUM_CHANNELS, 1.0, &mut rng);

            let fast = compose_adjacency(&q.channels, &params);

            // oracle
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for ti in 0..t {
                let logits = params.stage_logits.row(ti);
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|&x| (x - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                let pi: Vec<f64> = exps.iter().map(|e| e / z).collect();
                let mut mixed = vec![vec![0.0; m]; m];
                for (k, ch) in q.channels.channels.iter().enumerate() {
                    for i in 0..m {
                        for j in 0..m {
                            mixed[i][j] += pi[k] * ch.get(i, j);
                        }
                    }
                }
                acc = Some(match acc {
                    None => mixed,
                    Some(prev) => {
                        let mut out = vec![vec![0.0; m]; m];
                        for i in 0..m {
                            for j in 0..m {
                                let mut s = 0.0;
                                for (kk, mrow) in mixed.iter().enumerate() {
                                    s += prev[i][kk] * mrow[j];
                                }
                                out[i][j] = s;
                            }
                        }
                        out
                    }
                });
            }
            let oracle = acc.unwrap();
            for i in 0..m {
                for j in 0..m {
                    assert!(
                        (fast.get(i, j) - oracle[i][j]).abs() <= 1e-12,
                        "seed {seed} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn propagation_worked_examples() {
        // m = 1: Abar = [1], H1 = relu(h0 W)
        let q = random_workspace(1, 4, 5);
        let mut params = RetrieverParams::init(RetrieverMode::Enhanced, 4, 5);
        params.gcn = vec![Matrix::identity(4); GCN_LAYERS];
        let a = compose_adjacency(&q.channels, &params);
        assert!((a.get(0, 0) - 1.0).abs() <= 1e-12);
        let h = propagate(&a, &q.workspace, &params);
        let expect = q.workspace.node_init.map(|v| v.max(0.0));
        for (x, y) in h.data().iter().zip(expect.data()) {
            assert!((x - y).abs() <= 1e-12);
        }

        // hand-computed 2-node example (weights = identity, one layer)
        let mut ws = random_workspace(2, 2, 6).workspace;
        ws.node_init = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let a_comp = Matrix::from_vec(2, 2, vec![1.0, 1.0, 3.0, 0.0]);
        // Abar = row_normalize(A + I) = [[2/3, 1/3], [3/4, 1/4]]
        // H1 = relu(Abar * I * I) = Abar
        let mut p2 = RetrieverParams::init(RetrieverMode::Enhanced, 2, 1);
        p2.gcn = vec![Matrix::identity(2)];
        let h = {
            let abar = a_comp.add(&Matrix::identity(2)).row_normalize();
            let mut h = ws.node_init.clone();
            for w in &p2.gcn {
                h = abar.matmul(&h).matmul(w).map(|v| v.max(0.0));
            }
            h
        };
        let expected = [2.0 / 3.0, 1.0 / 3.0, 3.0 / 4.0, 1.0 / 4.0];
        for (x, y) in h.data().iter().zip(expected.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn abar_rows_are_stochastic() {
        for seed in 0..10 {
            let q = random_workspace(5, 8, seed);
            let params = RetrieverParams::init(RetrieverMode::Enhanced, 8, seed);
            let a = compose_adjacency(&q.channels, &params);
            let abar = a.add(&Matrix::identity(5)).row_normalize();
            for i in 0..5 {
                let s: f64 = abar.row(i).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pooling_singleton_uniform_and_simplex() {
        let h = Matrix::from_vec(1, 3, vec![0.2, -0.1, 0.4]);
        let (beta, z) = pool(&[1.0, 0.0, 0.0], &h, 1.0);
        assert_eq!(beta, vec![1.0]);
        assert_eq!(z, vec![0.2, -0.1, 0.4]);

        // equal scores -> uniform weights, mean of rows
        let h = Matrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 2.0]);
        let (beta, z) = pool(&[1.0, 0.0], &h, 1.0);
        assert!((beta[0] - 0.5).abs() <= 1e-12 && (beta[1] - 0.5).abs() <= 1e-12);
        assert!((z[0] - 1.0).abs() <= 1e-12 && (z[1] - 1.0).abs() <= 1e-12);

        // simplex + convex hull coordinate bounds on random data
        let q = random_workspace(6, 4, 9);
        let params = RetrieverParams::init(RetrieverMode::Enhanced, 4, 9);
        let a = compose_adjacency(&q.channels, &params);
        let h = propagate(&a, &q.workspace, &params);
        let (beta, z) = pool(&q.workspace.query_vec, &h, params.tau_pool);
        assert!((beta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(beta.iter().all(|&b| b >= 0.0));
        for c in 0..h.cols() {
            let lo = (0..h.rows()).map(|i| h.get(i, c)).fold(f64::INFINITY, f64::min);
            let hi = (0..h.rows()).map(|i| h.get(i, c)).fold(f64::NEG_INFINITY, f64::max);
            assert!(z[c] >= lo - 1e-12 && z[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn node_scores_zero_head_and_range() {
        let q = random_workspace(4, 6, 11);
        let mut params = RetrieverParams::init(RetrieverMode::Enhanced, 6, 11);
        params.head_w1 = Matrix::zeros(NODE_FEATURES, 6);
        params.head_w2 = Matrix::zeros(6, 1);
        let a = compose_adjacency(&q.channels, &params);
        let h = propagate(&a, &q.workspace, &params);
        let scores = node_scores(&q.workspace.query_vec, &h, &params);
        assert!(scores.iter().all(|&s| s == 0.5));

        let params = RetrieverParams::init(RetrieverMode::Enhanced, 6, 12);
        let scores = node_scores(&q.workspace.query_vec, &h, &params);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn retrieval_loss_closed_forms() {
        let zq = vec![1.0, 0.0];
        // B = 1: numerator equals denominator
        assert_eq!(retrieval_loss(&zq, &[vec![0.3, 0.4]], 0, 0.1), 0.0);
        // B = 2, equal sims -> ln 2
        let l = retrieval_loss(&zq, &[vec![2.0, 0.0], vec![5.0, 0.0]], 0, 1.0);
        assert!((l - core::f64::consts::LN_2).abs() <= 1e-12);
        // sims +1 / -1 at tau 1 -> ln(1 + e^-2)
        let l = retrieval_loss(&zq, &[vec![1.0, 0.0], vec![-1.0, 0.0]], 0, 1.0);
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() <= 1e-12);
        assert!((l - 0.126928).abs() <= 1e-6);
    }

    #[test]
    fn alignment_loss_substitutions() {
        let d = 4;
        let zq = vec![1.0, 0.0, 0.0, 0.0];
        let mk = |cos: f64| -> Vec<f64> {
            let mut v = vec![0.0; d];
            v[0] = cos;
            v[1] = (1.0 - cos * cos).sqrt();
            v
        };
        // s+ = 1, s- = -0.2 -> 0
        let mut h = Matrix::zeros(2, d);
        h.row_mut(0).copy_from_slice(&mk(1.0));
        h.row_mut(1).copy_from_slice(&mk(-0.2));
        assert!((alignment_loss(&zq, &h, &[0], &[1])).abs() <= 1e-12);
        // s+ = 0.2, s- = 0.5 -> 1.3
        h.row_mut(0).copy_from_slice(&mk(0.2));
        h.row_mut(1).copy_from_slice(&mk(0.5));
        assert!((alignment_loss(&zq, &h, &[0], &[1]) - 1.3).abs() <= 1e-12);
        // all similarities 0 -> 1.0
        h.row_mut(0).copy_from_slice(&mk(0.0));
        h.row_mut(1).copy_from_slice(&mk(0.0));
        assert!((alignment_loss(&zq, &h, &[0], &[1]) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn node_loss_substitutions() {
        let l = node_loss(&[0.5, 0.5], &[false, true]);
        assert!((l - core::f64::consts::LN_2).abs() <= 1e-12);
        let l = node_loss(&[0.25], &[true]);
        assert!((l - 4.0f64.ln()).abs() <= 1e-12);
        let l = node_loss(&[1.0 - 1e-13, 1e-13], &[true, false]);
        assert!(l <= 1e-11);
    }

    #[test]
    fn total_loss_is_linear_composition() {
        let params = RetrieverParams::init(RetrieverMode::Enhanced, 4, 0);
        assert!((total_loss(1.0, 1.0, 1.0, &params) - 2.5).abs() <= 1e-12);
        let mut free = params.clone();
        free.lambda_align = 0.0;
        free.lambda_node = 0.0;
        assert_eq!(total_loss(0.37, 9.0, 4.0, &free), 0.37);
    }

    #[test]
    fn gradients_match_finite_differences_on_a_six_node_workspace() {
        let d = 8;
        let q1 = random_workspace(6, d, 51);
        let q2 = random_workspace(6, d, 52);
        let params = RetrieverParams::init(RetrieverMode::Enhanced, d, 7);
        let queries = [&q1, &q2];

        let (_, grads) = batch_loss_gradients(&params, &queries, true);
        let step = 1e-5;
        fn leaf_mut(p: &mut RetrieverParams, i: usize) -> &mut Matrix {
            match i {
                0 => &mut p.stage_logits,
                1 => &mut p.gcn[0],
                2 => &mut p.gcn[1],
                3 => &mut p.head_w1,
                4 => &mut p.head_b1,
                5 => &mut p.head_w2,
                6 => &mut p.head_b2,
                _ => unreachable!(),
            }
        }
        let names = ["stage_logits", "gcn0", "gcn1", "head_w1", "head_b1", "head_w2", "head_b2"];
        for (li, name) in names.iter().enumerate() {
            let g = &grads[li];
            let mut worst = 0.0f64;
            // sample a handful of entries per leaf to keep the unit test fast
            let rows = g.rows();
            let cols = g.cols();
            let probes = [(0, 0), (rows - 1, cols - 1), (rows / 2, cols / 2)];
            for &(i, j) in &probes {
                let mut hi = params.clone();
                let mut lo = params.clone();
                let v = leaf_mut(&mut hi, li).get(i, j);
                leaf_mut(&mut hi, li).set(i, j, v + step);
                leaf_mut(&mut lo, li).set(i, j, v - step);
                let fd = (batch_loss_value(&hi, &queries, true)
                    - batch_loss_value(&lo, &queries, true))
                    / (2.0 * step);
                let a = g.get(i, j);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max((a - fd).abs() / denom);
            }
            assert!(worst <= 1e-4, "{name}: rel err {worst}");
        }

        // temperatures
        let (_, grads) = batch_loss_gradients(&params, &queries, true);
        for (idx, field) in [(7usize, "tau_pool"), (8usize, "tau_ret")] {
            let a = grads[idx].scalar();
            let mut hi = params.clone();
            let mut lo = params.clone();
            if field == "tau_pool" {
                hi.tau_pool += step;
                lo.tau_pool -= step;
            } else {
                hi.tau_ret += step;
                lo.tau_ret -= step;
            }
            let fd = (batch_loss_value(&hi, &queries, true) - batch_loss_value(&lo, &queries, true))
                / (2.0 * step);
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!((a - fd).abs() / denom <= 1e-4, "{field}: {a} vs {fd}");
        }
    }

    #[test]
    fn taped_forward_matches_value_level_forward() {
        let q = random_workspace(5, 6, 31);
        let params = RetrieverParams::init(RetrieverMode::Enhanced, 6, 3);
        let mut tape = Tape::new();
        let tp = register_params(&mut tape, &params);
        let fwd = taped_forward(&mut tape, &tp, &q);
        let value_scores = forward_scores(&params, &q);
        let taped_scores: Vec<f64> = tape
            .value(fwd.node_logits)
            .data()
            .iter()
            .map(|&o| sigmoid(o))
            .collect();
        for (a, b) in value_scores.iter().zip(&taped_scores) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn candidate_permutation_equivariance() {
        use rand::Rng;
        for seed in 0..10u64 {
            let q = random_workspace(7, 6, seed + 300);
            let params = RetrieverParams::init(RetrieverMode::Enhanced, 6, seed);
            let scores = forward_scores(&params, &q);
            let loss = batch_loss_value(&params, &[&q], true);

            // random permutation
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut perm: Vec<usize> = (0..7).collect();
            perm.shuffle(&mut rng);
            let _ = rng.random::<u32>();

            let ws = &q.workspace;
            let mut node_init = Matrix::zeros(7, 6);
            for (new, &old) in perm.iter().enumerate() {
                node_init.row_mut(new).copy_from_slice(ws.node_init.row(old));
            }
            let permuted = Workspace {
                sheet_ids: perm.iter().map(|&i| ws.sheet_ids[i]).collect(),
                query_vec: ws.query_vec.clone(),
                node_init,
                labels: Some(perm.iter().map(|&i| ws.labels.as_ref().unwrap()[i]).collect()),
                records: perm.iter().map(|&i| ws.records[i].clone()).collect(),
            };
            let qp = PreparedQuery::from_workspace(permuted).unwrap();
            let scores_p = forward_scores(&params, &qp);
            let loss_p = batch_loss_value(&params, &[&qp], true);

            for (new, &old) in perm.iter().enumerate() {
                assert!((scores_p[new] - scores[old]).abs() <= 1e-10, "seed {seed}");
            }
            assert!((loss - loss_p).abs() <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn single_set_training_is_a_no_op() {
        // lambda = 0 and a single candidate set in the denominator: the loss
        // is identically zero and parameters stay at initialization.
        let q1 = random_workspace(4, 6, 71);
        let q2 = random_workspace(5, 6, 72);
        let mut params = RetrieverParams::init(RetrieverMode::Enhanced, 6, 4);
        params.lambda_align = 0.0;
        params.lambda_node = 0.0;

        let loss = batch_loss_value(&params, &[&q1], false);
        assert_eq!(loss, 0.0);

        // emulate two epochs of single-query batches
        let before = params.clone();
        let velocities: Vec<&Matrix> = {
            let mut v: Vec<&Matrix> = vec![&params.stage_logits];
            v.extend(params.gcn.iter());
            v.extend([&params.head_w1, &params.head_b1, &params.head_w2, &params.head_b2]);
            v
        };
        let mut opt = Sgd::new(0.9, &velocities);
        for q in [&q1, &q2, &q1, &q2] {
            let (_, grads) = batch_loss_gradients(&params, &[q], false);
            let refs: Vec<Option<&Matrix>> = grads[..7].iter().map(Some).collect();
            let mut leaves: Vec<&mut Matrix> = vec![&mut params.stage_logits];
            leaves.extend(params.gcn.iter_mut());
            leaves.extend([
                &mut params.head_w1,
                &mut params.head_b1,
                &mut params.head_w2,
                &mut params.head_b2,
            ]);
            opt.step(&mut leaves, &refs, 0.5);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn ranking_breaks_ties_by_ascending_sheet_id() {
        let mut result = RetrievalResult {
            sheet_ids: vec![3, 7, 9],
            node_scores: vec![0.5, 0.9, 0.5],
            pooling_weights: vec![0.3, 0.3, 0.4],
            set_vec: vec![],
            ranking: vec![],
            selected: vec![],
        };
        let mut ranking: Vec<usize> = (0..3).collect();
        ranking.sort_by(|&a, &b| {
            result.node_scores[b]
                .partial_cmp(&result.node_scores[a])
                .unwrap()
                .then(result.sheet_ids[a].cmp(&result.sheet_ids[b]))
        });
        result.ranking = ranking;
        assert_eq!(result.ranked_ids(), vec![7, 3, 9]);
    }
}
