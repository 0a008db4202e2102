//! Shared data model: sheet records, supervision instances, and the token
//! cache.
//!
//! Everything here is immutable after construction and safe to share across
//! threads. Construction validates the structural invariants; persistence
//! formats live in the companion IO crate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

/// Catalog-wide sheet identifier.
pub type SheetId = u32;

/// Maximum length (Unicode scalars) of a stored column example.
pub const MAX_EXAMPLE_LEN: usize = 60;

/// Structural invariant violations in the data model.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("sheet {0}: column count {1} does not match num_cols {2}")]
    ColumnCountMismatch(SheetId, usize, u32),
    #[error("sheet {0}: num_cols must be positive")]
    ZeroColumns(SheetId),
    #[error("sheet {sheet_id}: example for column {column} is {len} chars (max {MAX_EXAMPLE_LEN})")]
    ExampleTooLong {
        sheet_id: SheetId,
        column: usize,
        len: usize,
    },
    #[error("duplicate sheet_id {0}")]
    DuplicateSheetId(SheetId),
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("pair joins sheet {0} with itself")]
    SelfPair(SheetId),
    #[error("pair label {0} is outside {{0,1}}")]
    InvalidLabel(i64),
    #[error("query positives and negatives overlap on sheet {0}")]
    OverlappingSets(SheetId),
    #[error("query has an empty {0} set")]
    EmptySet(&'static str),
    #[error("sheet_id {0} is not present in the catalog")]
    UnresolvableId(SheetId),
    #[error("token for sheet {0} has {1} components, cache dim is {2}")]
    TokenDimMismatch(SheetId, usize, usize),
    #[error("token for sheet {0} contains a non-finite component")]
    NonFiniteToken(SheetId),
}

/// Header plus one representative example value for a column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub header: String,
    pub example: String,
}

/// One worksheet's schema-aware metadata: name, shape, headers, examples.
///
/// `num_rows` counts data rows (the header row is excluded), so a header-only
/// sheet legitimately has `num_rows == 0`; shape-dependent consumers reject
/// such sheets at their own boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetRecord {
    pub sheet_id: SheetId,
    /// Workbook filename plus tab identifier.
    pub source_name: String,
    pub num_rows: u32,
    pub num_cols: u32,
    pub columns: Vec<ColumnMeta>,
}

impl SheetRecord {
    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.num_cols == 0 {
            return Err(RecordError::ZeroColumns(self.sheet_id));
        }
        if self.columns.len() != self.num_cols as usize {
            return Err(RecordError::ColumnCountMismatch(
                self.sheet_id,
                self.columns.len(),
                self.num_cols,
            ));
        }
        for (j, col) in self.columns.iter().enumerate() {
            let len = col.example.chars().count();
            if len > MAX_EXAMPLE_LEN {
                return Err(RecordError::ExampleTooLong {
                    sheet_id: self.sheet_id,
                    column: j,
                    len,
                });
            }
        }
        Ok(())
    }
}

/// The workbook collection: sheet_id -> record, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SheetCatalog {
    records: BTreeMap<SheetId, SheetRecord>,
}

impl SheetCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates the record and inserts it, rejecting duplicate ids.
    pub fn insert(&mut self, record: SheetRecord) -> Result<(), RecordError> {
        record.validate()?;
        if self.records.contains_key(&record.sheet_id) {
            return Err(RecordError::DuplicateSheetId(record.sheet_id));
        }
        self.records.insert(record.sheet_id, record);
        Ok(())
    }

    pub fn from_records(
        records: impl IntoIterator<Item = SheetRecord>,
    ) -> Result<Self, RecordError> {
        let mut catalog = Self::new();
        for r in records {
            catalog.insert(r)?;
        }
        if catalog.is_empty() {
            return Err(RecordError::EmptyCatalog);
        }
        Ok(catalog)
    }

    pub fn get(&self, id: SheetId) -> Option<&SheetRecord> {
        self.records.get(&id)
    }

    pub fn contains(&self, id: SheetId) -> bool {
        self.records.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ascending sheet_id order.
    pub fn iter(&self) -> impl Iterator<Item = &SheetRecord> {
        self.records.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = SheetId> + '_ {
        self.records.keys().copied()
    }
}

/// Pairwise supervision: do two sheets originate from the same table?
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub id1: SheetId,
    pub id2: SheetId,
    pub label: bool,
}

impl PairExample {
    pub fn new(id1: SheetId, id2: SheetId, label: bool) -> Result<Self, RecordError> {
        if id1 == id2 {
            return Err(RecordError::SelfPair(id1));
        }
        Ok(PairExample { id1, id2, label })
    }

    /// Checks that both endpoints resolve in `catalog`.
    pub fn validate_against(&self, catalog: &SheetCatalog) -> Result<(), RecordError> {
        for id in [self.id1, self.id2] {
            if !catalog.contains(id) {
                return Err(RecordError::UnresolvableId(id));
            }
        }
        Ok(())
    }
}

/// Listwise supervision: a query with disjoint positive/negative candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryInstance {
    pub query: String,
    pub positives: BTreeSet<SheetId>,
    pub negatives: BTreeSet<SheetId>,
}

impl QueryInstance {
    pub fn new(
        query: String,
        positives: BTreeSet<SheetId>,
        negatives: BTreeSet<SheetId>,
    ) -> Result<Self, RecordError> {
        if positives.is_empty() {
            return Err(RecordError::EmptySet("positive"));
        }
        if negatives.is_empty() {
            return Err(RecordError::EmptySet("negative"));
        }
        if let Some(&id) = positives.intersection(&negatives).next() {
            return Err(RecordError::OverlappingSets(id));
        }
        Ok(QueryInstance {
            query,
            positives,
            negatives,
        })
    }

    /// The candidate workspace: positives and negatives in ascending id order.
    pub fn candidates(&self) -> Vec<SheetId> {
        self.positives.union(&self.negatives).copied().collect()
    }

    pub fn validate_against(&self, catalog: &SheetCatalog) -> Result<(), RecordError> {
        for &id in self.positives.iter().chain(self.negatives.iter()) {
            if !catalog.contains(id) {
                return Err(RecordError::UnresolvableId(id));
            }
        }
        Ok(())
    }
}

/// Persisted Stage 1 output: sheet_id -> dense sheet token.
///
/// Components are stored as `f32` to match the on-disk packing exactly, so a
/// cache round-trips bit-for-bit. Tokens are unit-norm up to `f32` rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenCache {
    dim: usize,
    entries: BTreeMap<SheetId, Vec<f32>>,
}

impl TokenCache {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "token dimension must be positive");
        TokenCache {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, id: SheetId, token: Vec<f32>) -> Result<(), RecordError> {
        if token.len() != self.dim {
            return Err(RecordError::TokenDimMismatch(id, token.len(), self.dim));
        }
        if token.iter().any(|v| !v.is_finite()) {
            return Err(RecordError::NonFiniteToken(id));
        }
        self.entries.insert(id, token);
        Ok(())
    }

    pub fn get(&self, id: SheetId) -> Option<&[f32]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    /// Token widened to `f64` for numeric work.
    pub fn get_f64(&self, id: SheetId) -> Option<Vec<f64>> {
        self.entries
            .get(&id)
            .map(|t| t.iter().map(|&v| v as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending sheet_id order.
    pub fn iter(&self) -> impl Iterator<Item = (SheetId, &[f32])> {
        self.entries.iter().map(|(&id, v)| (id, v.as_slice()))
    }
}
