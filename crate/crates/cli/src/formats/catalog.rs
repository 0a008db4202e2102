//! The three JSON corpus files and the split lists.
//!
//! Writing is canonical: sheet ids ascend numerically, field order is fixed,
//! and the byte stream carries no formatting variance, so
//! `store(load(store(x)))` is byte-identical to `store(x)`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sheettoken_core::fabricate::SplitIndices;
use sheettoken_core::record::{
    ColumnMeta, PairExample, QueryInstance, RecordError, SheetCatalog, SheetId, SheetRecord,
};

use super::{read_file, write_file, FormatError};

#[derive(Serialize, Deserialize)]
struct ColumnJson {
    header: String,
    example: String,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    filename: String,
    num_rows: u32,
    num_cols: u32,
    columns: Vec<ColumnJson>,
}

/// The sheets.json body: entries in file order, duplicate keys preserved so
/// they can be rejected instead of silently collapsed.
struct CatalogEntries(Vec<(String, RecordJson)>);

impl<'de> Deserialize<'de> for CatalogEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = CatalogEntries;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an object mapping sheet_id strings to records")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry::<String, RecordJson>()? {
                    entries.push(entry);
                }
                Ok(CatalogEntries(entries))
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// Loads and validates sheets.json. Rejects malformed JSON, duplicate ids,
/// and records violating the model invariants, naming the offending sheet.
pub fn load_catalog(path: &Path) -> Result<SheetCatalog, FormatError> {
    let bytes = read_file(path)?;
    let entries: CatalogEntries =
        serde_json::from_slice(&bytes).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            source,
        })?;

    let mut catalog = SheetCatalog::new();
    for (key, record) in entries.0 {
        let sheet_id: SheetId = key.parse().map_err(|_| FormatError::BadKey {
            path: path.to_path_buf(),
            key: key.clone(),
        })?;
        let record = SheetRecord {
            sheet_id,
            source_name: record.filename,
            num_rows: record.num_rows,
            num_cols: record.num_cols,
            columns: record
                .columns
                .into_iter()
                .map(|c| ColumnMeta {
                    header: c.header,
                    example: c.example,
                })
                .collect(),
        };
        catalog.insert(record).map_err(|source| match source {
            RecordError::DuplicateSheetId(id) => FormatError::DuplicateId {
                path: path.to_path_buf(),
                id,
            },
            other => FormatError::Invalid {
                path: path.to_path_buf(),
                source: other,
            },
        })?;
    }
    if catalog.is_empty() {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            source: RecordError::EmptyCatalog,
        });
    }
    Ok(catalog)
}

/// Stores sheets.json canonically.
pub fn store_catalog(catalog: &SheetCatalog, path: &Path) -> Result<(), FormatError> {
    let mut map = serde_json::Map::new();
    for record in catalog.iter() {
        let value = serde_json::json!({
            "filename": record.source_name,
            "num_rows": record.num_rows,
            "num_cols": record.num_cols,
            "columns": record.columns.iter().map(|c| serde_json::json!({
                "header": c.header,
                "example": c.example,
            })).collect::<Vec<_>>(),
        });
        map.insert(record.sheet_id.to_string(), value);
    }
    let body = serde_json::to_vec_pretty(&serde_json::Value::Object(map)).expect("serializable");
    write_file(path, &body)
}

/// Loads train.json: an array of `[id1, id2, label]` triples, order
/// preserved.
pub fn load_pairs(path: &Path) -> Result<Vec<PairExample>, FormatError> {
    let bytes = read_file(path)?;
    let raw: Vec<(SheetId, SheetId, i64)> =
        serde_json::from_slice(&bytes).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let mut out = Vec::with_capacity(raw.len());
    for (index, (id1, id2, label)) in raw.into_iter().enumerate() {
        let label = match label {
            0 => false,
            1 => true,
            other => {
                return Err(FormatError::BadLabel {
                    path: path.to_path_buf(),
                    index,
                    label: other,
                })
            }
        };
        let pair = PairExample::new(id1, id2, label).map_err(|source| FormatError::Invalid {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn store_pairs(pairs: &[PairExample], path: &Path) -> Result<(), FormatError> {
    let raw: Vec<(SheetId, SheetId, u8)> = pairs
        .iter()
        .map(|p| (p.id1, p.id2, u8::from(p.label)))
        .collect();
    let body = serde_json::to_vec_pretty(&raw).expect("serializable");
    write_file(path, &body)
}

#[derive(Serialize, Deserialize)]
struct QueryJson {
    query: String,
    positives: Vec<SheetId>,
    negatives: Vec<SheetId>,
}

/// Loads query.json, enforcing disjoint non-empty candidate sets.
pub fn load_queries(path: &Path) -> Result<Vec<QueryInstance>, FormatError> {
    let bytes = read_file(path)?;
    let raw: Vec<QueryJson> = serde_json::from_slice(&bytes).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    raw.into_iter()
        .map(|q| {
            let positives: BTreeSet<SheetId> = q.positives.into_iter().collect();
            let negatives: BTreeSet<SheetId> = q.negatives.into_iter().collect();
            QueryInstance::new(q.query, positives, negatives).map_err(|source| {
                FormatError::Invalid {
                    path: path.to_path_buf(),
                    source,
                }
            })
        })
        .collect()
}

pub fn store_queries(queries: &[QueryInstance], path: &Path) -> Result<(), FormatError> {
    let raw: Vec<QueryJson> = queries
        .iter()
        .map(|q| QueryJson {
            query: q.query.clone(),
            positives: q.positives.iter().copied().collect(),
            negatives: q.negatives.iter().copied().collect(),
        })
        .collect();
    let body = serde_json::to_vec_pretty(&raw).expect("serializable");
    write_file(path, &body)
}

#[derive(Serialize, Deserialize)]
struct SplitsJson {
    pair_train: Vec<u32>,
    pair_eval: Vec<u32>,
    query_train: Vec<u32>,
    query_eval: Vec<u32>,
}

pub fn load_splits(path: &Path) -> Result<SplitIndices, FormatError> {
    let bytes = read_file(path)?;
    let raw: SplitsJson = serde_json::from_slice(&bytes).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(SplitIndices {
        pair_train: raw.pair_train,
        pair_eval: raw.pair_eval,
        query_train: raw.query_train,
        query_eval: raw.query_eval,
    })
}

pub fn store_splits(splits: &SplitIndices, path: &Path) -> Result<(), FormatError> {
    let raw = SplitsJson {
        pair_train: splits.pair_train.clone(),
        pair_eval: splits.pair_eval.clone(),
        query_train: splits.query_train.clone(),
        query_eval: splits.query_eval.clone(),
    };
    let body = serde_json::to_vec_pretty(&raw).expect("serializable");
    write_file(path, &body)
}
