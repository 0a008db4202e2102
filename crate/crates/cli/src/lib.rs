//! IO companion to `sheettoken-core`: persistence formats, CSV ingestion,
//! pipeline orchestration, and report rendering for the `sheettoken` CLI.
//!
//! The on-disk formats are bit-exact contracts:
//!
//! - `sheets.json` — object mapping decimal-string sheet ids to records,
//!   canonically ordered so store/load/store is byte-identical;
//! - `train.json` — array of `[id1, id2, label]` triples;
//! - `query.json` — array of `{query, positives, negatives}` objects;
//! - `splits.json` — the four train/eval index lists;
//! - `*.stkn` — binary token cache (`STKN` magic, packed little-endian f32);
//! - `*.bin` — versioned encoder/retriever parameter files with the same
//!   f32 packing discipline.

pub mod csv_grid;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use formats::FormatError;
