//! CSV ingestion: RFC-4180-style files become cell grids.
//!
//! The first row carries headers, an empty field is a null cell, and the
//! file stem (optionally containing a `::<tab>` suffix) becomes the grid's
//! source name.

use std::path::Path;

use sheettoken_core::extract::CellGrid;
use sheettoken_core::fabricate::{infer_attributes, TemplateTable};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Read {
        path: std::path::PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Grid {
        path: std::path::PathBuf,
        source: sheettoken_core::extract::GridError,
    },
    #[error("{path}: no CSV files found")]
    NoTemplates { path: std::path::PathBuf },
}

/// Reads one CSV file into a grid.
pub fn load_grid(path: &Path) -> Result<CellGrid, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|source| CsvError::Read {
            path: path.to_path_buf(),
            source,
        })?;
    let mut cells: Vec<Vec<Option<String>>> = Vec::new();
    let mut width = 0usize;
    for record in reader.records() {
        let record = record.map_err(|source| CsvError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let row: Vec<Option<String>> = record
            .iter()
            .map(|f| {
                if f.is_empty() {
                    None
                } else {
                    Some(f.to_string())
                }
            })
            .collect();
        width = width.max(row.len());
        cells.push(row);
    }
    // ragged short rows are padded with nulls (trailing commas are optional)
    for row in &mut cells {
        row.resize(width, None);
    }
    let source_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sheet".to_string());
    CellGrid::new(source_name, cells).map_err(|source| CsvError::Grid {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every `*.csv` in a directory (sorted by filename) as a template,
/// inferring query attributes from well-known metadata columns.
pub fn load_templates(dir: &Path) -> Result<Vec<TemplateTable>, CsvError> {
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| CsvError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CsvError::NoTemplates {
            path: dir.to_path_buf(),
        });
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let grid = load_grid(&p)?;
        let attributes = infer_attributes(&grid);
        out.push(TemplateTable { grid, attributes });
    }
    Ok(out)
}
