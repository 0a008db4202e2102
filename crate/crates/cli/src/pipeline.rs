//! Pipeline orchestration: corpus directories, split-aware loading, parallel
//! encoding, and the three-variant ablation runner.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sheettoken_core::encoder::{self, EncoderConfig, EncoderParams, TrainError};
use sheettoken_core::fabricate::{
    build_corpus, make_splits, CorpusBuild, FabricationConfig, SplitIndices, TemplateTable,
};
use sheettoken_core::metrics::Split;
use sheettoken_core::record::{PairExample, QueryInstance, SheetCatalog, TokenCache};
use sheettoken_core::retriever::{
    self, PreparedQuery, RetrieverError, RetrieverMode, RetrieverParams, RetrieverTrainConfig,
};

use crate::formats::{self, FormatError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Fabricate(#[from] sheettoken_core::fabricate::FabricateError),
    #[error(transparent)]
    EncoderTraining(#[from] TrainError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Record(#[from] sheettoken_core::record::RecordError),
    #[error("{0}")]
    Corrupt(String),
}

/// Standard file layout of a corpus directory.
pub struct CorpusDir {
    root: PathBuf,
}

impl CorpusDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sheets(&self) -> PathBuf {
        self.root.join("sheets.json")
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("train.json")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("query.json")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }
}

/// A corpus with its persisted splits, fully validated.
pub struct LoadedCorpus {
    pub catalog: SheetCatalog,
    pub pairs: Vec<PairExample>,
    pub queries: Vec<QueryInstance>,
    pub splits: SplitIndices,
}

impl LoadedCorpus {
    pub fn pair_split(&self) -> (Vec<PairExample>, Vec<PairExample>) {
        let take = |idx: &[u32]| idx.iter().map(|&i| self.pairs[i as usize]).collect();
        (take(&self.splits.pair_train), take(&self.splits.pair_eval))
    }

    pub fn query_split(&self) -> (Vec<QueryInstance>, Vec<QueryInstance>) {
        let take = |idx: &[u32]| -> Vec<QueryInstance> {
            idx.iter()
                .map(|&i| self.queries[i as usize].clone())
                .collect()
        };
        (
            take(&self.splits.query_train),
            take(&self.splits.query_eval),
        )
    }
}

/// Fabricates a corpus and writes the four artifact files plus stats.json.
/// Returns the build (with any skipped-query warnings) for reporting.
pub fn fabricate_to_dir(
    templates: &[TemplateTable],
    cfg: &FabricationConfig,
    out: &CorpusDir,
) -> Result<CorpusBuild, PipelineError> {
    let build = build_corpus(templates, cfg)?;
    // split stream is disjoint from the per-template and corpus-level streams
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let splits = make_splits(&build.pairs, &build.queries, &mut rng);

    std::fs::create_dir_all(out.root()).map_err(|source| FormatError::Io {
        path: out.root().to_path_buf(),
        source,
    })?;
    formats::store_catalog(&build.catalog, &out.sheets())?;
    formats::store_pairs(&build.pairs, &out.pairs())?;
    formats::store_queries(&build.queries, &out.queries())?;
    formats::store_splits(&splits, &out.splits())?;

    let stats = serde_json::json!({
        "templates": build.stats.templates,
        "sheets": build.stats.sheets,
        "positives": build.stats.positives,
        "negatives": build.stats.negatives,
        "pairs": build.pairs.len(),
        "queries": build.stats.queries,
        "mean_positive_set": build.stats.mean_positive_set,
        "mean_negative_set": build.stats.mean_negative_set,
        "per_category": build.stats.per_category,
        "pair_train": splits.pair_train.len(),
        "pair_eval": splits.pair_eval.len(),
        "query_train": splits.query_train.len(),
        "query_eval": splits.query_eval.len(),
    });
    std::fs::write(
        out.stats(),
        serde_json::to_vec_pretty(&stats).expect("serializable"),
    )
    .map_err(|source| FormatError::Io {
        path: out.stats(),
        source,
    })?;
    Ok(build)
}

/// Loads and cross-validates a corpus directory.
pub fn load_corpus(dir: &CorpusDir) -> Result<LoadedCorpus, PipelineError> {
    let catalog = formats::load_catalog(&dir.sheets())?;
    let pairs = formats::load_pairs(&dir.pairs())?;
    let queries = formats::load_queries(&dir.queries())?;
    let splits = formats::load_splits(&dir.splits())?;

    for p in &pairs {
        p.validate_against(&catalog)?;
    }
    for q in &queries {
        q.validate_against(&catalog)?;
    }
    let check = |idx: &[u32], n: usize, what: &str| -> Result<(), PipelineError> {
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= n) {
            return Err(PipelineError::Corrupt(format!(
                "splits.json: {what} index {bad} out of range ({n} entries)"
            )));
        }
        Ok(())
    };
    check(&splits.pair_train, pairs.len(), "pair_train")?;
    check(&splits.pair_eval, pairs.len(), "pair_eval")?;
    check(&splits.query_train, queries.len(), "query_train")?;
    check(&splits.query_eval, queries.len(), "query_eval")?;

    Ok(LoadedCorpus {
        catalog,
        pairs,
        queries,
        splits,
    })
}

/// Parallel catalog encoding: `embed_record` is pure, tokens are computed
/// across threads and assembled in sheet_id order, so the cache is
/// bit-identical to the serial [`encoder::encode_catalog`].
pub fn encode_catalog_parallel(catalog: &SheetCatalog, params: &EncoderParams) -> TokenCache {
    let records: Vec<_> = catalog.iter().collect();
    let tokens: Vec<(u32, Vec<f32>)> = records
        .par_iter()
        .map(|r| {
            let token: Vec<f32> = encoder::embed_record(r, params)
                .into_iter()
                .map(|v| v as f32)
                .collect();
            (r.sheet_id, token)
        })
        .collect();
    let mut cache = TokenCache::new(params.dim);
    for (id, token) in tokens {
        cache.insert(id, token).expect("dimension fixed by params");
    }
    cache
}

/// Hyperparameters for one ablation run.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub encoder: EncoderConfig,
    pub retriever: RetrieverTrainConfig,
}

pub const ABLATION_VARIANTS: [&str; 3] = ["full", "shallow_baseline", "wo_column_examples"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// (variant, mean accuracy, mean entropy) in the Table layout order.
    pub means: Vec<(String, f64, f64)>,
}

impl AblationReport {
    pub fn mean_accuracy(&self, variant: &str) -> f64 {
        self.means
            .iter()
            .find(|(v, _, _)| v == variant)
            .map(|(_, a, _)| *a)
            .expect("known variant")
    }

    /// Checks the expected ordering full >= shallow >= w/o examples on the
    /// means and counts per-seed agreement.
    pub fn ordering_check(&self) -> (bool, usize, usize) {
        let acc = |variant: &str, seed: u64| {
            self.rows
                .iter()
                .find(|r| r.variant == variant && r.seed == seed)
                .map(|r| r.accuracy)
                .expect("complete grid")
        };
        let seeds: Vec<u64> = {
            let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let per_seed_ok = seeds
            .iter()
            .filter(|&&s| {
                let full = acc("full", s);
                let shallow = acc("shallow_baseline", s);
                let noex = acc("wo_column_examples", s);
                full >= shallow && shallow >= noex
            })
            .count();
        let means_ok = self.mean_accuracy("full") >= self.mean_accuracy("shallow_baseline")
            && self.mean_accuracy("shallow_baseline") >= self.mean_accuracy("wo_column_examples");
        (means_ok, per_seed_ok, seeds.len())
    }
}

/// Trains and evaluates the three Table-shaped variants per seed:
/// full (multi-stage + examples), shallow baseline (two stages + examples),
/// and w/o column examples (multi-stage + example-free Stage 1).
pub fn run_ablations(
    corpus: &LoadedCorpus,
    cfg: &AblationConfig,
) -> Result<AblationReport, PipelineError> {
    let (pair_train, pair_eval) = corpus.pair_split();
    let (query_train, query_eval) = corpus.query_split();

    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut encoder_cfg = cfg.encoder.clone();
        encoder_cfg.seed = seed;
        encoder_cfg.include_examples = true;
        let mut encoder_cfg_noex = encoder_cfg.clone();
        encoder_cfg_noex.include_examples = false;

        let (enc_full, _) =
            encoder::train_encoder(&corpus.catalog, &pair_train, &pair_eval, &encoder_cfg)?;
        let (enc_noex, _) =
            encoder::train_encoder(&corpus.catalog, &pair_train, &pair_eval, &encoder_cfg_noex)?;
        let tokens_full = encode_catalog_parallel(&corpus.catalog, &enc_full);
        let tokens_noex = encode_catalog_parallel(&corpus.catalog, &enc_noex);

        let mut train_cfg = cfg.retriever.clone();
        train_cfg.seed = seed;

        let variants: [(&str, RetrieverMode, &TokenCache, &EncoderParams); 3] = [
            ("full", RetrieverMode::Enhanced, &tokens_full, &enc_full),
            (
                "shallow_baseline",
                RetrieverMode::Baseline,
                &tokens_full,
                &enc_full,
            ),
            (
                "wo_column_examples",
                RetrieverMode::Enhanced,
                &tokens_noex,
                &enc_noex,
            ),
        ];
        for (name, mode, tokens, enc) in variants {
            let init = RetrieverParams::init(mode, enc.dim, seed);
            let (params, log) = retriever::train_retriever(
                &corpus.catalog,
                tokens,
                enc,
                &query_train,
                &query_eval,
                init,
                &train_cfg,
            )?;
            let last = log
                .split(Split::Eval)
                .last()
                .expect("training logged at least one epoch");
            // re-evaluate to decouple the report from log bookkeeping
            let prepared: Vec<PreparedQuery> = query_eval
                .iter()
                .map(|q| PreparedQuery::from_query(q, &corpus.catalog, tokens, enc))
                .collect::<Result<_, _>>()?;
            let (acc, ent) = retriever::evaluate_queries(&params, &prepared);
            debug_assert!((acc.per_candidate - last.accuracy).abs() < 1e-12);
            rows.push(AblationRow {
                variant: name.to_string(),
                seed,
                accuracy: acc.per_candidate,
                entropy: ent,
            });
        }
    }

    let means = ABLATION_VARIANTS
        .iter()
        .map(|&v| {
            let of: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            let n = of.len().max(1) as f64;
            (
                v.to_string(),
                of.iter().map(|r| r.accuracy).sum::<f64>() / n,
                of.iter().map(|r| r.entropy).sum::<f64>() / n,
            )
        })
        .collect();

    Ok(AblationReport { rows, means })
}

/// On-disk encoder configuration (all fields optional, defaults applied).
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfigFile {
    pub dim: Option<usize>,
    pub header_cap: Option<usize>,
    pub smoothing: Option<f64>,
    pub hash_buckets: Option<usize>,
    pub include_examples: Option<bool>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
}

impl EncoderConfigFile {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let bytes = crate::formats::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn apply(self, mut cfg: EncoderConfig) -> EncoderConfig {
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.header_cap {
            cfg.header_cap = v;
        }
        if let Some(v) = self.smoothing {
            cfg.smoothing = v;
        }
        if let Some(v) = self.hash_buckets {
            cfg.hash_buckets = v;
        }
        if let Some(v) = self.include_examples {
            cfg.include_examples = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}
