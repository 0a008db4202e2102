//! Synthetic corpus fabrication.
//!
//! One seed table yields a source/target sheet pair with controlled column
//! and row overlap plus three source-side noise channels (schema prefixing,
//! keyboard-proximity string noise, half-normal numeric resampling), and the
//! alignment of shared columns as ground truth. [`build_corpus`] assembles
//! catalogs, pairwise supervision with sampled cross-workbook negatives, and
//! listwise query instances from shared attributes; [`make_splits`] produces
//! the seeded train/eval partitions.
//!
//! Everything is a pure function of `(templates, config, seed)`. Each
//! template consumes its own ChaCha stream, so pairs could be fabricated in
//! parallel without changing a single output byte.

pub mod keyboard;
pub mod templates;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)] // trait methods back f64 math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::extract::{apply_placeholders, extract_record, CellGrid, PlaceholderPolicy};
use crate::record::{PairExample, QueryInstance, SheetCatalog, SheetId};

pub use keyboard::{transliterate, KeyboardMap};
pub use templates::{generate_templates, infer_attributes, TemplateTable};

/// Fraction of pairs reserved for evaluation.
pub const PAIR_EVAL_FRACTION: f64 = 0.1;
/// Fraction of queries reserved for evaluation.
pub const QUERY_EVAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricateError {
    #[error("table '{name}' too small: {cols} cols / {rows} data rows (need >= 4 / >= 8)")]
    TableTooSmall {
        name: String,
        cols: usize,
        rows: usize,
    },
    #[error("need at least 2 distinct workbook names, got {0}")]
    TooFewWorkbooks(usize),
    #[error("could not sample {needed} distinct cross-workbook negatives")]
    NegativesExhausted { needed: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("grid error: {0}")]
    Grid(#[from] crate::extract::GridError),
    #[error("record error: {0}")]
    Record(#[from] crate::record::RecordError),
}

/// Knobs of the fabrication procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct FabricationConfig {
    /// Column-overlap fraction is drawn uniformly from this range.
    pub col_overlap_min: f64,
    pub col_overlap_max: f64,
    /// Fraction of data rows shared between source and target.
    pub row_overlap: f64,
    /// Per-character keyboard-noise probability on source-side string cells.
    pub p_string: f64,
    /// Magnitude range of the numeric-noise perturbations; the sign of each
    /// epsilon is drawn separately, giving Uniform([-max,-min] u [min,max]).
    pub eps_min: f64,
    pub eps_max: f64,
    /// Negatives sampled per positive pair.
    pub neg_ratio: u32,
    pub seed: u64,
}

impl Default for FabricationConfig {
    fn default() -> Self {
        FabricationConfig {
            col_overlap_min: 0.5,
            col_overlap_max: 0.7,
            row_overlap: 0.5,
            p_string: 0.20,
            eps_min: 0.1,
            eps_max: 0.5,
            neg_ratio: 5,
            seed: 0,
        }
    }
}

impl FabricationConfig {
    pub fn validate(&self) -> Result<(), FabricateError> {
        if !(0.0..=1.0).contains(&self.p_string) {
            return Err(FabricateError::BadConfig("p_string outside [0,1]"));
        }
        if !(self.col_overlap_min > 0.0
            && self.col_overlap_min <= self.col_overlap_max
            && self.col_overlap_max <= 1.0)
        {
            return Err(FabricateError::BadConfig("column overlap range outside (0,1]"));
        }
        if !(self.row_overlap > 0.0 && self.row_overlap <= 1.0) {
            return Err(FabricateError::BadConfig("row overlap outside (0,1]"));
        }
        if self.neg_ratio < 1 {
            return Err(FabricateError::BadConfig("neg_ratio must be >= 1"));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_max) {
            return Err(FabricateError::BadConfig("epsilon range must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

/// A fabricated source/target pair with its column alignment
/// (source column index, target column index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FabricatedPair {
    pub source: CellGrid,
    pub target: CellGrid,
    pub alignment: Vec<(usize, usize)>,
}

/// Valentine's table-name prefix rule: `Vendor -> Sales_Vendor`.
pub fn schema_noise(header: &str, table_name: &str) -> String {
    format!("{table_name}_{header}")
}

/// Keyboard-proximity string noise against the bundled QWERTY map.
///
/// The text is ASCII-transliterated first; each resulting character present
/// in the map is then independently replaced by a uniformly chosen neighbor
/// with probability `p`.
pub fn string_noise(text: &str, p: f64, rng: &mut impl Rng) -> String {
    KeyboardMap::bundled().corrupt(text, p, rng)
}

/// Resamples a numeric column from a perturbed half-normal.
///
/// With empirical mean and population standard deviation of the input and
/// per-column draws `eps_mu`, `eps_sigma`, every output value is an
/// independent `|N(mu*(1+eps_mu), (sigma*(1+eps_sigma))^2)|` draw.
pub fn numeric_noise(column: &[f64], cfg: &FabricationConfig, rng: &mut impl Rng) -> Vec<f64> {
    assert!(!column.is_empty(), "numeric_noise on empty column");
    assert!(column.iter().all(|v| v.is_finite()), "non-finite input");
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();

    let eps_mu = draw_epsilon(cfg, rng);
    let eps_sigma = draw_epsilon(cfg, rng);
    let mu_p = mean * (1.0 + eps_mu);
    let sigma_p = sigma * (1.0 + eps_sigma);

    column
        .iter()
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (mu_p + sigma_p * z).abs()
        })
        .collect()
}

fn draw_epsilon(cfg: &FabricationConfig, rng: &mut impl Rng) -> f64 {
    let magnitude = rng.random_range(cfg.eps_min..=cfg.eps_max);
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Workbook base of a source name: everything before the tab marker.
pub fn workbook_base(source_name: &str) -> &str {
    source_name.split("::").next().unwrap_or(source_name)
}

/// Derives a source/target pair from one table.
///
/// The shared-column count is `round(f*C)` for `f` drawn uniformly from the
/// overlap range, clamped so the realized fraction stays inside the range;
/// `round(row_overlap*R)` data rows are shared and the remainder is split
/// between the sides. Source-side shared columns receive schema noise on the
/// header and string or numeric noise on the cells; the target keeps the
/// original headers and values, so aligned target headers equal the pre-noise
/// source headers.
pub fn fabricate_pair(
    table: &CellGrid,
    cfg: &FabricationConfig,
    rng: &mut impl Rng,
) -> Result<FabricatedPair, FabricateError> {
    cfg.validate()?;
    let cols = table.cols();
    let rows = table.data_rows();
    if cols < 4 || rows < 8 {
        return Err(FabricateError::TableTooSmall {
            name: table.source_name.clone(),
            cols,
            rows,
        });
    }

    let f = rng.random_range(cfg.col_overlap_min..=cfg.col_overlap_max);
    let lo = (cfg.col_overlap_min * cols as f64 - 1e-9).ceil() as usize;
    let hi = (cfg.col_overlap_max * cols as f64 + 1e-9).floor() as usize;
    let shared_count = ((f * cols as f64).round() as usize).clamp(lo.max(1), hi.max(1));

    let mut col_order: Vec<usize> = (0..cols).collect();
    col_order.shuffle(rng);
    let mut shared_cols: Vec<usize> = col_order[..shared_count].to_vec();
    shared_cols.sort_unstable();
    let rest = &col_order[shared_count..];
    let half = rest.len().div_ceil(2);
    let mut source_extra: Vec<usize> = rest[..half].to_vec();
    let mut target_extra: Vec<usize> = rest[half..].to_vec();
    source_extra.sort_unstable();
    target_extra.sort_unstable();

    let mut row_order: Vec<usize> = (1..=rows).collect();
    row_order.shuffle(rng);
    let shared_row_count = ((cfg.row_overlap * rows as f64).round() as usize).max(1);
    let shared_rows = &row_order[..shared_row_count.min(rows)];
    let rest_rows = &row_order[shared_row_count.min(rows)..];
    let half_rows = rest_rows.len().div_ceil(2);
    let mut source_rows: Vec<usize> = shared_rows.iter().chain(&rest_rows[..half_rows]).copied().collect();
    let mut target_rows: Vec<usize> = shared_rows.iter().chain(&rest_rows[half_rows..]).copied().collect();
    source_rows.sort_unstable();
    target_rows.sort_unstable();

    let mut source_cols: Vec<usize> = shared_cols.iter().chain(&source_extra).copied().collect();
    source_cols.sort_unstable();
    let mut target_cols: Vec<usize> = shared_cols.iter().chain(&target_extra).copied().collect();
    target_cols.sort_unstable();

    let base = workbook_base(&table.source_name).to_string();
    let source_name = format!("{base}.xlsx::source");
    let target_name = format!("{base}.xlsx::target");

    let mut source = project(table, &source_name, &source_cols, &source_rows);
    let target = project(table, &target_name, &target_cols, &target_rows);

    // Source-side noise on shared columns, in source column order.
    let map = KeyboardMap::bundled();
    for (pos, &orig_col) in source_cols.iter().enumerate() {
        if !shared_cols.contains(&orig_col) {
            continue;
        }
        if let Some(h) = table.header(orig_col) {
            *source.cell_mut(0, pos) = Some(schema_noise(h, &base));
        }
        if table.column_is_numeric(orig_col) {
            let mut values = Vec::new();
            let mut slots = Vec::new();
            for r in 1..source.rows() {
                if let Some(v) = source.cell(r, pos) {
                    if let Ok(x) = v.trim().parse::<f64>() {
                        values.push(x);
                        slots.push(r);
                    }
                }
            }
            if values.is_empty() {
                continue;
            }
            let noised = numeric_noise(&values, cfg, rng);
            for (r, v) in slots.into_iter().zip(noised) {
                *source.cell_mut(r, pos) = Some(format!("{v:.2}"));
            }
        } else {
            for r in 1..source.rows() {
                if let Some(v) = source.cell(r, pos) {
                    let noised = map.corrupt(v, cfg.p_string, rng);
                    *source.cell_mut(r, pos) = Some(noised);
                }
            }
        }
    }

    let alignment = shared_cols
        .iter()
        .map(|c| {
            let s = source_cols.iter().position(|x| x == c).unwrap();
            let t = target_cols.iter().position(|x| x == c).unwrap();
            (s, t)
        })
        .collect();

    Ok(FabricatedPair {
        source,
        target,
        alignment,
    })
}

fn project(table: &CellGrid, name: &str, cols: &[usize], data_rows: &[usize]) -> CellGrid {
    let mut cells = Vec::with_capacity(data_rows.len() + 1);
    let take_row = |r: usize| -> Vec<Option<String>> {
        cols.iter()
            .map(|&c| table.cell(r, c).map(str::to_string))
            .collect()
    };
    cells.push(take_row(0));
    for &r in data_rows {
        cells.push(take_row(r));
    }
    CellGrid::new(name.to_string(), cells).expect("projection preserves rectangularity")
}

/// Everything [`build_corpus`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBuild {
    pub catalog: SheetCatalog,
    pub pairs: Vec<PairExample>,
    pub queries: Vec<QueryInstance>,
    /// Skipped query families, for CLI surfacing.
    pub warnings: Vec<String>,
    pub stats: FabricationStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabricationStats {
    pub templates: usize,
    pub sheets: usize,
    pub positives: usize,
    pub negatives: usize,
    pub queries: usize,
    pub mean_positive_set: f64,
    pub mean_negative_set: f64,
    pub per_category: BTreeMap<String, usize>,
}

const QUERY_SINGLE_KEYS: [&str; 4] = [
    templates::ATTR_COMPANY,
    templates::ATTR_FISCAL_YEAR,
    templates::ATTR_QUARTER,
    templates::ATTR_SUB_CATEGORY,
];
const QUERY_PAIR_KEYS: [(&str, &str); 2] = [
    (templates::ATTR_COMPANY, templates::ATTR_FISCAL_YEAR),
    (templates::ATTR_SUB_CATEGORY, templates::ATTR_QUARTER),
];

fn attribute_display(key: &str) -> &str {
    match key {
        templates::ATTR_FISCAL_YEAR => "fiscal year",
        templates::ATTR_SUB_CATEGORY => "sub category",
        other => other,
    }
}

/// Fabricates the full corpus: two sheets and one positive pair per template,
/// `neg_ratio` cross-workbook negatives per positive, and listwise queries
/// from shared attribute values with equal-sized uniformly sampled negative
/// sets.
pub fn build_corpus(
    tables: &[TemplateTable],
    cfg: &FabricationConfig,
) -> Result<CorpusBuild, FabricateError> {
    cfg.validate()?;
    let distinct_books: BTreeSet<&str> = tables
        .iter()
        .map(|t| workbook_base(&t.grid.source_name))
        .collect();
    if distinct_books.len() < 2 {
        return Err(FabricateError::TooFewWorkbooks(distinct_books.len()));
    }

    let policy = PlaceholderPolicy::default();
    let mut catalog = SheetCatalog::new();
    let mut pairs_by_template: Vec<PairExample> = Vec::with_capacity(tables.len());
    let mut workbook_of: Vec<String> = Vec::with_capacity(tables.len() * 2);

    for (i, t) in tables.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 + i as u64);
        let pair = fabricate_pair(&t.grid, cfg, &mut rng)?;
        let base = workbook_base(&t.grid.source_name).to_string();

        let source_id = (2 * i) as SheetId;
        let target_id = (2 * i + 1) as SheetId;
        catalog.insert(extract_record(&apply_placeholders(&pair.source, &policy), source_id)?)?;
        catalog.insert(extract_record(&apply_placeholders(&pair.target, &policy), target_id)?)?;
        workbook_of.push(base.clone());
        workbook_of.push(base);
        pairs_by_template.push(PairExample::new(source_id, target_id, true)?);
    }

    let total_sheets = workbook_of.len();
    let mut corpus_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    corpus_rng.set_stream(0);

    // Negative pairs: cross-workbook, globally deduplicated, grouped after
    // their positive in file order.
    let mut pairs: Vec<PairExample> = Vec::new();
    let mut used: BTreeSet<(SheetId, SheetId)> = BTreeSet::new();
    let mut negatives = 0usize;
    for (i, positive) in pairs_by_template.iter().enumerate() {
        pairs.push(*positive);
        let mut found = 0;
        let mut attempts = 0;
        while found < cfg.neg_ratio {
            attempts += 1;
            if attempts > 10_000 {
                return Err(FabricateError::NegativesExhausted {
                    needed: cfg.neg_ratio as usize,
                });
            }
            let a = (2 * i + corpus_rng.random_range(0..2usize)) as SheetId;
            let b = corpus_rng.random_range(0..total_sheets) as SheetId;
            if workbook_of[a as usize] == workbook_of[b as usize] {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if !used.insert(key) {
                continue;
            }
            pairs.push(PairExample::new(a, b, false)?);
            found += 1;
            negatives += 1;
        }
    }

    // Listwise queries from attribute families.
    let mut queries: Vec<QueryInstance> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let all_ids: Vec<SheetId> = (0..total_sheets as SheetId).collect();

    let emit = |text: String,
                    template_idx: &[usize],
                    rng: &mut ChaCha8Rng,
                    queries: &mut Vec<QueryInstance>,
                    warnings: &mut Vec<String>| {
        let positives: BTreeSet<SheetId> = template_idx
            .iter()
            .flat_map(|&i| [(2 * i) as SheetId, (2 * i + 1) as SheetId])
            .collect();
        if positives.is_empty() || positives.len() == total_sheets {
            warnings.push(format!("skipping query '{text}': matches zero or all sheets"));
            return;
        }
        let mut remainder: Vec<SheetId> = all_ids
            .iter()
            .copied()
            .filter(|id| !positives.contains(id))
            .collect();
        if remainder.len() < positives.len() {
            warnings.push(format!(
                "skipping query '{text}': only {} non-matching sheets for {} positives",
                remainder.len(),
                positives.len()
            ));
            return;
        }
        remainder.shuffle(rng);
        let negatives: BTreeSet<SheetId> = remainder[..positives.len()].iter().copied().collect();
        queries.push(
            QueryInstance::new(text, positives, negatives).expect("disjoint by construction"),
        );
    };

    for key in QUERY_SINGLE_KEYS {
        let mut by_value: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, t) in tables.iter().enumerate() {
            if let Some(v) = t.attribute(key) {
                by_value.entry(v).or_default().push(i);
            }
        }
        for (value, idx) in by_value {
            let text = format!("retrieve all sheets for {} {}", attribute_display(key), value);
            emit(text, &idx, &mut corpus_rng, &mut queries, &mut warnings);
        }
    }
    for (k1, k2) in QUERY_PAIR_KEYS {
        let mut by_value: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
        for (i, t) in tables.iter().enumerate() {
            if let (Some(v1), Some(v2)) = (t.attribute(k1), t.attribute(k2)) {
                by_value.entry((v1, v2)).or_default().push(i);
            }
        }
        for ((v1, v2), idx) in by_value {
            let text = format!(
                "retrieve all sheets for {} {} and {} {}",
                attribute_display(k1),
                v1,
                attribute_display(k2),
                v2
            );
            emit(text, &idx, &mut corpus_rng, &mut queries, &mut warnings);
        }
    }

    let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
    for t in tables {
        let cat = t
            .attribute(templates::ATTR_CATEGORY)
            .unwrap_or("uncategorized")
            .to_string();
        *per_category.entry(cat).or_default() += 1;
    }
    let qn = queries.len().max(1) as f64;
    let stats = FabricationStats {
        templates: tables.len(),
        sheets: total_sheets,
        positives: pairs_by_template.len(),
        negatives,
        queries: queries.len(),
        mean_positive_set: queries.iter().map(|q| q.positives.len() as f64).sum::<f64>() / qn,
        mean_negative_set: queries.iter().map(|q| q.negatives.len() as f64).sum::<f64>() / qn,
        per_category,
    };

    Ok(CorpusBuild {
        catalog,
        pairs,
        queries,
        warnings,
        stats,
    })
}

/// Index lists of the train/eval partitions (into the pair and query arrays).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub pair_train: Vec<u32>,
    pub pair_eval: Vec<u32>,
    pub query_train: Vec<u32>,
    pub query_eval: Vec<u32>,
}

/// Seeded 90/10 pair-level and 80/20 query-level splits; disjoint,
/// exhaustive, eval side never empty, indices ascending within each list.
pub fn make_splits(
    pairs: &[PairExample],
    queries: &[QueryInstance],
    rng: &mut impl Rng,
) -> SplitIndices {
    let (pair_train, pair_eval) = split_indices(pairs.len(), PAIR_EVAL_FRACTION, rng);
    let (query_train, query_eval) = split_indices(queries.len(), QUERY_EVAL_FRACTION, rng);
    SplitIndices {
        pair_train,
        pair_eval,
        query_train,
        query_eval,
    }
}

fn split_indices(n: usize, eval_fraction: f64, rng: &mut impl Rng) -> (Vec<u32>, Vec<u32>) {
    assert!(n > 0, "cannot split an empty set");
    let eval = ((n as f64 * eval_fraction).round() as usize).clamp(1, n);
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.shuffle(rng);
    let mut eval_idx: Vec<u32> = idx[..eval].to_vec();
    let mut train_idx: Vec<u32> = idx[eval..].to_vec();
    eval_idx.sort_unstable();
    train_idx.sort_unstable();
    (train_idx, eval_idx)
}
