//! The `sheettoken` command-line umbrella.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sheettoken::csv_grid;
use sheettoken::formats;
use sheettoken::pipeline::{
    self, AblationConfig, CorpusDir, EncoderConfigFile, LoadedCorpus,
};
use sheettoken::report::{self, MetricRow};
use sheettoken_core::encoder::{self, EncoderConfig};
use sheettoken_core::fabricate::{generate_templates, FabricationConfig};
use sheettoken_core::flops::FlopsConfig;
use sheettoken_core::metrics::Split;
use sheettoken_core::retriever::{
    self, PreparedQuery, RetrieverMode, RetrieverParams, RetrieverTrainConfig, Selection,
};

/// Acceptance thresholds enforced by `--check`.
const STAGE1_ACCURACY_THRESHOLD: f64 = 0.90;
const STAGE2_ACCURACY_THRESHOLD: f64 = 0.80;

#[derive(Parser)]
#[command(
    name = "sheettoken",
    about = "Two-stage sheet retrieval: fabricate corpora, train the sheet encoder and the graph retriever, query, evaluate, ablate, and estimate FLOPs.",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fabricate a synthetic corpus (sheets.json, train.json, query.json,
    /// splits.json, stats.json).
    Fabricate(FabricateArgs),
    /// Train the Stage 1 sheet encoder on the pairwise split.
    TrainEncoder(TrainEncoderArgs),
    /// Encode every catalog sheet into a binary token cache.
    Encode(EncodeArgs),
    /// Train the Stage 2 graph retriever on the listwise split.
    TrainRetriever(TrainRetrieverArgs),
    /// Rank candidate sheets for a query.
    Query(QueryArgs),
    /// Evaluate a trained stage on the held-out split.
    Eval(EvalArgs),
    /// Run the three-variant ablation over a list of seeds.
    Ablate(AblateArgs),
    /// Print the analytic FLOPs report.
    Flops(FlopsArgs),
}

#[derive(Args)]
struct FabricateArgs {
    /// Directory of CSV seed tables; bundled templates are generated when
    /// omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of source/target pairs (bundled generator only).
    #[arg(long, default_value_t = 307)]
    pairs: usize,
    #[arg(long, default_value_t = 5)]
    neg_ratio: u32,
    #[arg(long, default_value_t = 0.20)]
    p_string: f64,
}

#[derive(Args)]
struct TrainEncoderArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON file overriding encoder hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop example values from the serialization (ablation switch).
    #[arg(long)]
    no_examples: bool,
    /// Train-log CSV path (default: <out>.log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Enhanced,
    Baseline,
}

impl From<ModeArg> for RetrieverMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Enhanced => RetrieverMode::Enhanced,
            ModeArg::Baseline => RetrieverMode::Baseline,
        }
    }
}

#[derive(Args)]
struct TrainRetrieverArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    /// Encoder model used to embed query text.
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Enhanced)]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Train-log CSV path (default: <out>.log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    text: String,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    retriever: PathBuf,
    #[arg(long, conflicts_with = "threshold")]
    topk: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Emit the ranked candidates as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    stage: u8,
    #[arg(long)]
    corpus: PathBuf,
    /// Stage 1: encoder model path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Stage 2: token cache path.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Stage 2: encoder model path (query embedding).
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Stage 2: retriever model path.
    #[arg(long)]
    retriever: Option<PathBuf>,
    /// Exit nonzero if the stage misses its acceptance threshold.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated seed list.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    encoder_epochs: usize,
    #[arg(long, default_value_t = 30)]
    retriever_epochs: usize,
    /// Exit nonzero if the expected accuracy ordering fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, default_value_t = 220)]
    features: u64,
    #[arg(long, default_value_t = 128)]
    dim: u64,
    #[arg(long, default_value_t = 25)]
    workspace: u64,
    #[arg(long, default_value_t = 3)]
    stages: u64,
    #[arg(long, default_value_t = 2)]
    layers: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Fabricate(args) => fabricate(args),
        Cmd::TrainEncoder(args) => train_encoder(args),
        Cmd::Encode(args) => encode(args),
        Cmd::TrainRetriever(args) => train_retriever(args),
        Cmd::Query(args) => query(args),
        Cmd::Eval(args) => eval(args),
        Cmd::Ablate(args) => ablate(args),
        Cmd::Flops(args) => {
            let cfg = FlopsConfig {
                features_per_sheet: args.features,
                dim: args.dim,
                workspace: args.workspace,
                stages: args.stages,
                layers: args.layers,
                ..FlopsConfig::default()
            };
            print!("{}", report::render_flops_report(&cfg));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn fabricate(args: FabricateArgs) -> Result<ExitCode> {
    let templates = match &args.templates {
        Some(dir) => csv_grid::load_templates(dir)?,
        None => generate_templates(args.pairs, args.seed),
    };
    let templates = if args.templates.is_some() && args.pairs < templates.len() {
        templates[..args.pairs].to_vec()
    } else {
        templates
    };
    let cfg = FabricationConfig {
        p_string: args.p_string,
        neg_ratio: args.neg_ratio,
        seed: args.seed,
        ..FabricationConfig::default()
    };
    let out = CorpusDir::new(&args.out);
    let build = pipeline::fabricate_to_dir(&templates, &cfg, &out)?;
    for w in &build.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "fabricated {} sheets, {} pairs ({} positives / {} negatives), {} queries -> {}",
        build.stats.sheets,
        build.pairs.len(),
        build.stats.positives,
        build.stats.negatives,
        build.stats.queries,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_corpus(path: &PathBuf) -> Result<LoadedCorpus> {
    pipeline::load_corpus(&CorpusDir::new(path))
        .with_context(|| format!("loading corpus from {}", path.display()))
}

fn train_encoder(args: TrainEncoderArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let mut cfg = EncoderConfig::default();
    if let Some(path) = &args.config {
        cfg = EncoderConfigFile::load(path)?.apply(cfg);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_examples {
        cfg.include_examples = false;
    }
    let (pair_train, pair_eval) = corpus.pair_split();
    let (params, log) = encoder::train_encoder(&corpus.catalog, &pair_train, &pair_eval, &cfg)?;
    formats::store_encoder_params(&params, &args.out)?;
    let log_path = args
        .log
        .unwrap_or_else(|| args.out.with_extension("log.csv"));
    std::fs::write(&log_path, log.to_csv())?;
    let last = log.split(Split::Eval).last().expect("at least one epoch");
    println!(
        "trained encoder: eval accuracy {:.4}, eval entropy {:.4} ({} epochs) -> {}",
        last.accuracy,
        last.entropy,
        cfg.epochs,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn encode(args: EncodeArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let params = formats::load_encoder_params(&args.model)?;
    let cache = pipeline::encode_catalog_parallel(&corpus.catalog, &params);
    formats::write_token_cache(&cache, &args.out)?;
    println!(
        "encoded {} sheets at dim {} -> {}",
        cache.len(),
        cache.dim(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_retriever(args: TrainRetrieverArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let cache = formats::read_token_cache(&args.tokens)?;
    let enc = formats::load_encoder_params(&args.encoder)?;
    let (query_train, query_eval) = corpus.query_split();
    let init = RetrieverParams::init(args.mode.into(), enc.dim, args.seed);
    let cfg = RetrieverTrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        ..RetrieverTrainConfig::default()
    };
    let (params, log) = retriever::train_retriever(
        &corpus.catalog,
        &cache,
        &enc,
        &query_train,
        &query_eval,
        init,
        &cfg,
    )?;
    formats::store_retriever_params(&params, &args.out)?;
    let log_path = args
        .log
        .unwrap_or_else(|| args.out.with_extension("log.csv"));
    std::fs::write(&log_path, log.to_csv())?;
    let last = log.split(Split::Eval).last().expect("at least one epoch");
    println!(
        "trained retriever ({} stages): eval accuracy {:.4}, eval entropy {:.4} -> {}",
        params.num_stages,
        last.accuracy,
        last.entropy,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn query(args: QueryArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let cache = formats::read_token_cache(&args.tokens)?;
    let enc = formats::load_encoder_params(&args.encoder)?;
    let params = formats::load_retriever_params(&args.retriever)?;
    let selection = match (args.topk, args.threshold) {
        (Some(k), None) => Selection::TopK(k),
        (None, Some(t)) => Selection::Threshold(t),
        (None, None) => Selection::Threshold(0.5),
        (Some(_), Some(_)) => bail!("--topk and --threshold are mutually exclusive"),
    };
    let result = retriever::retrieve(
        &args.text,
        &corpus.catalog,
        &cache,
        &enc,
        &params,
        None,
        selection,
    )?;

    if args.json {
        let ranked: Vec<serde_json::Value> = result
            .ranking
            .iter()
            .map(|&i| {
                serde_json::json!({
                    "sheet_id": result.sheet_ids[i],
                    "score": result.node_scores[i],
                    "selected": result.selected[i],
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&ranked)?);
    } else {
        println!("{:<10} {:>10} {:>9}  source", "sheet_id", "score", "selected");
        for &i in &result.ranking {
            let record = corpus.catalog.get(result.sheet_ids[i]).expect("from catalog");
            println!(
                "{:<10} {:>10.4} {:>9}  {}",
                result.sheet_ids[i],
                result.node_scores[i],
                if result.selected[i] { "yes" } else { "no" },
                record.source_name
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let mut rows = Vec::new();
    let mut pass = true;
    match args.stage {
        1 => {
            let model = args
                .model
                .context("--model is required for --stage 1")?;
            let params = formats::load_encoder_params(&model)?;
            let (pair_train, pair_eval) = corpus.pair_split();
            for (split, pairs) in [("train", &pair_train), ("eval", &pair_eval)] {
                let (accuracy, entropy) = encoder::evaluate_pairs(&corpus.catalog, pairs, &params);
                rows.push(MetricRow {
                    stage: 1,
                    split,
                    accuracy,
                    entropy,
                });
            }
            let eval_acc = rows.last().expect("two rows").accuracy;
            if args.check && eval_acc < STAGE1_ACCURACY_THRESHOLD {
                eprintln!(
                    "check failed: stage 1 eval accuracy {eval_acc:.4} < {STAGE1_ACCURACY_THRESHOLD}"
                );
                pass = false;
            }
        }
        2 => {
            let tokens = args.tokens.context("--tokens is required for --stage 2")?;
            let enc_path = args
                .encoder
                .context("--encoder is required for --stage 2")?;
            let retr = args
                .retriever
                .context("--retriever is required for --stage 2")?;
            let cache = formats::read_token_cache(&tokens)?;
            let enc = formats::load_encoder_params(&enc_path)?;
            let params = formats::load_retriever_params(&retr)?;
            let (query_train, query_eval) = corpus.query_split();
            let mut eval_acc = 0.0;
            for (split, queries) in [("train", &query_train), ("eval", &query_eval)] {
                let prepared: Vec<PreparedQuery> = queries
                    .iter()
                    .map(|q| PreparedQuery::from_query(q, &corpus.catalog, &cache, &enc))
                    .collect::<Result<_, _>>()?;
                let (acc, entropy) = retriever::evaluate_queries(&params, &prepared);
                if split == "eval" {
                    eval_acc = acc.per_candidate;
                    println!("exact-set rate ({split}): {:.4}", acc.exact_set);
                }
                rows.push(MetricRow {
                    stage: 2,
                    split,
                    accuracy: acc.per_candidate,
                    entropy,
                });
            }
            if args.check && eval_acc < STAGE2_ACCURACY_THRESHOLD {
                eprintln!(
                    "check failed: stage 2 eval accuracy {eval_acc:.4} < {STAGE2_ACCURACY_THRESHOLD}"
                );
                pass = false;
            }
        }
        other => bail!("unknown stage {other}; use 1 or 2"),
    }
    print!("{}", report::render_metric_table(&rows));
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn ablate(args: AblateArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse().context("seeds must be integers"))
        .collect::<Result<_>>()?;
    let cfg = AblationConfig {
        seeds,
        encoder: EncoderConfig {
            epochs: args.encoder_epochs,
            ..EncoderConfig::default()
        },
        retriever: RetrieverTrainConfig {
            epochs: args.retriever_epochs,
            ..RetrieverTrainConfig::default()
        },
    };
    let report_data = pipeline::run_ablations(&corpus, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.csv"), report::ablation_csv(&report_data))?;
    std::fs::write(args.out.join("report.json"), report::ablation_json(&report_data))?;
    print!("{}", report::ablation_table(&report_data));

    let (means_ok, per_seed_ok, total) = report_data.ordering_check();
    println!("ordering: means {}; per-seed {per_seed_ok}/{total}", if means_ok { "ok" } else { "violated" });
    if args.check && (!means_ok || per_seed_ok * 5 < total * 4) {
        eprintln!("check failed: accuracy ordering full >= shallow >= wo_examples not met");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
