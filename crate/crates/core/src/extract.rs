//! Raw cell grids, schema-aware record extraction, and typed placeholders.
//!
//! A [`CellGrid`] is the rectangular string view of one worksheet: row 0 is
//! the header row, everything below is data, and an absent value is a null
//! cell. [`extract_record`] reduces a grid to its schema-aware
//! [`SheetRecord`]; [`apply_placeholders`] substitutes long free text and
//! high-cardinality text columns with typed placeholders before extraction.
//!
//! Both functions are pure: identical inputs give identical outputs, and
//! grids may be processed in parallel.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::record::{ColumnMeta, SheetId, SheetRecord, MAX_EXAMPLE_LEN};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("grid has no rows")]
    EmptyGrid,
    #[error("row {row} has {got} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("grid has zero columns")]
    ZeroColumns,
}

/// Rectangular grid of optional string cells; row 0 carries the headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGrid {
    pub source_name: String,
    cells: Vec<Vec<Option<String>>>,
    cols: usize,
}

impl CellGrid {
    pub fn new(source_name: String, cells: Vec<Vec<Option<String>>>) -> Result<Self, GridError> {
        let Some(first) = cells.first() else {
            return Err(GridError::EmptyGrid);
        };
        let cols = first.len();
        for (row, r) in cells.iter().enumerate() {
            if r.len() != cols {
                return Err(GridError::RaggedRow {
                    row,
                    expected: cols,
                    got: r.len(),
                });
            }
        }
        Ok(CellGrid {
            source_name,
            cells,
            cols,
        })
    }

    /// Convenience constructor from `&str` rows; empty strings become nulls.
    pub fn from_strs(source_name: &str, rows: &[&[&str]]) -> Result<Self, GridError> {
        let cells = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| {
                        if c.is_empty() {
                            None
                        } else {
                            Some((*c).to_string())
                        }
                    })
                    .collect()
            })
            .collect();
        CellGrid::new(source_name.to_string(), cells)
    }

    /// Total rows including the header row.
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    /// Data rows (header excluded).
    pub fn data_rows(&self) -> usize {
        self.cells.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.cells[row][col].as_deref()
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut Option<String> {
        &mut self.cells[row][col]
    }

    pub fn header(&self, col: usize) -> Option<&str> {
        self.cell(0, col)
    }

    pub fn row_cells(&self, row: usize) -> &[Option<String>] {
        &self.cells[row]
    }

    /// True when every non-null data cell of the column parses as a number.
    pub fn column_is_numeric(&self, col: usize) -> bool {
        let mut any = false;
        for row in 1..self.rows() {
            if let Some(v) = self.cell(row, col) {
                if v.trim().parse::<f64>().is_err() {
                    return false;
                }
                any = true;
            }
        }
        any
    }
}

/// Governs [`apply_placeholders`]: the long-text cap and the high-cardinality
/// column rule with per-column-kind prefixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceholderPolicy {
    /// Cells longer than this (in chars) become note placeholders.
    pub length_cap: usize,
    /// Unique-value ratio above which a text column is substituted.
    pub cardinality_ratio_num: u32,
    pub cardinality_ratio_den: u32,
    /// Columns with fewer non-null values than this are left alone.
    pub min_rows: usize,
    /// Prefix for the long-text rule.
    pub note_prefix: String,
    /// Prefix for high-cardinality columns whose header has no dedicated entry.
    pub default_prefix: String,
    /// Lowercased header -> prefix overrides (e.g. "title" -> "Movie").
    pub prefixes: BTreeMap<String, String>,
}

impl Default for PlaceholderPolicy {
    fn default() -> Self {
        PlaceholderPolicy {
            length_cap: 120,
            cardinality_ratio_num: 4,
            cardinality_ratio_den: 5,
            min_rows: 20,
            note_prefix: "Note".to_string(),
            default_prefix: "Text".to_string(),
            prefixes: BTreeMap::new(),
        }
    }
}

impl PlaceholderPolicy {
    /// The cardinality threshold as a real ratio.
    pub fn cardinality_ratio(&self) -> f64 {
        self.cardinality_ratio_num as f64 / self.cardinality_ratio_den as f64
    }

    fn prefix_for(&self, header: Option<&str>) -> &str {
        header
            .map(|h| h.to_lowercase())
            .and_then(|h| self.prefixes.get(&h))
            .map(String::as_str)
            .unwrap_or(&self.default_prefix)
    }

    /// True for values this policy has already substituted.
    fn is_placeholder(&self, value: &str) -> bool {
        let known = core::iter::once(self.note_prefix.as_str())
            .chain(core::iter::once(self.default_prefix.as_str()))
            .chain(self.prefixes.values().map(String::as_str));
        for prefix in known {
            if let Some(rest) = value.strip_prefix(prefix) {
                if let Some(digits) = rest.strip_prefix('_') {
                    if digits.len() >= 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

fn placeholder(prefix: &str, n: usize) -> String {
    format!("{prefix}_{n:04}")
}

/// Converts a grid into a schema-aware record.
///
/// Headers come from row 0 (a null header cell is synthesized as `col_<j>`),
/// `num_rows` counts data rows only, and the example for a column is its
/// first non-null data cell truncated to [`MAX_EXAMPLE_LEN`] chars (empty if
/// the column holds no data).
pub fn extract_record(grid: &CellGrid, sheet_id: SheetId) -> Result<SheetRecord, GridError> {
    if grid.cols() == 0 {
        return Err(GridError::ZeroColumns);
    }
    let mut columns = Vec::with_capacity(grid.cols());
    for j in 0..grid.cols() {
        let header = match grid.header(j) {
            Some(h) => h.to_string(),
            None => format!("col_{j}"),
        };
        let example = (1..grid.rows())
            .find_map(|r| grid.cell(r, j))
            .map(|v| v.chars().take(MAX_EXAMPLE_LEN).collect())
            .unwrap_or_default();
        columns.push(ColumnMeta { header, example });
    }
    Ok(SheetRecord {
        sheet_id,
        source_name: grid.source_name.clone(),
        num_rows: grid.data_rows() as u32,
        num_cols: grid.cols() as u32,
        columns,
    })
}

/// Substitutes typed placeholders into a grid's data cells.
///
/// Two rules, applied in order and both skipping values that are already
/// placeholders so the whole pass is idempotent:
///
/// 1. any data cell longer than `length_cap` chars becomes
///    `<note_prefix>_NNNN`, where NNNN is the 1-based index of the distinct
///    value's first occurrence in row-major reading order (equal values share
///    a placeholder);
/// 2. any text column with at least `min_rows` remaining values whose
///    unique-value ratio exceeds the cardinality threshold has each distinct
///    value mapped to `<prefix>_NNNN` by first occurrence top-down. Numeric
///    columns are data, not vocabulary, and are exempt.
///
/// Headers are never replaced.
pub fn apply_placeholders(grid: &CellGrid, policy: &PlaceholderPolicy) -> CellGrid {
    let mut out = grid.clone();

    // Rule 1: long free text, numbered in reading order over the whole grid.
    let mut note_map: BTreeMap<String, String> = BTreeMap::new();
    let mut note_order: Vec<String> = Vec::new();
    for row in 1..out.rows() {
        for col in 0..out.cols() {
            let Some(value) = out.cell(row, col) else {
                continue;
            };
            if policy.is_placeholder(value) || value.chars().count() <= policy.length_cap {
                continue;
            }
            let substituted = note_map.entry(value.to_string()).or_insert_with(|| {
                note_order.push(value.to_string());
                placeholder(&policy.note_prefix, note_order.len())
            });
            let substituted = substituted.clone();
            *out.cell_mut(row, col) = Some(substituted);
        }
    }

    // Rule 2: high-cardinality text columns.
    for col in 0..out.cols() {
        if out.column_is_numeric(col) {
            continue;
        }
        let mut values: Vec<String> = Vec::new();
        for row in 1..out.rows() {
            if let Some(v) = out.cell(row, col) {
                if !policy.is_placeholder(v) {
                    values.push(v.to_string());
                }
            }
        }
        if values.len() < policy.min_rows {
            continue;
        }
        let mut distinct: Vec<&str> = Vec::new();
        for v in &values {
            if !distinct.contains(&v.as_str()) {
                distinct.push(v);
            }
        }
        // ratio test on exact integers: distinct/count > num/den
        let exceeds = (distinct.len() as u64) * policy.cardinality_ratio_den as u64
            > (values.len() as u64) * policy.cardinality_ratio_num as u64;
        if !exceeds {
            continue;
        }
        let prefix = policy.prefix_for(grid.header(col)).to_string();
        let mapping: BTreeMap<String, String> = distinct
            .iter()
            .enumerate()
            .map(|(k, v)| (v.to_string(), placeholder(&prefix, k + 1)))
            .collect();
        for row in 1..out.rows() {
            let Some(v) = out.cell(row, col) else { continue };
            if let Some(sub) = mapping.get(v) {
                let sub = sub.clone();
                *out.cell_mut(row, col) = Some(sub);
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn extracts_headers_examples_and_shape() {
        let grid =
            CellGrid::from_strs("prices.xlsx::Sheet1", &[&["Index", "Date"], &["1", "2000-01-07"]])
                .unwrap();
        let r = extract_record(&grid, 0).unwrap();
        assert_eq!(r.source_name, "prices.xlsx::Sheet1");
        assert_eq!(r.num_rows, 1);
        assert_eq!(r.num_cols, 2);
        assert_eq!(r.columns[0].header, "Index");
        assert_eq!(r.columns[0].example, "1");
        assert_eq!(r.columns[1].header, "Date");
        assert_eq!(r.columns[1].example, "2000-01-07");
    }

    #[test]
    fn example_is_first_non_null_truncated_to_60_chars() {
        let long = "x".repeat(100);
        let grid = CellGrid::new(
            "t".into(),
            vec![
                vec![Some("A".into()), Some("B".into())],
                vec![None, Some(long.clone())],
                vec![Some("later".into()), Some("ignored".into())],
            ],
        )
        .unwrap();
        let r = extract_record(&grid, 1).unwrap();
        assert_eq!(r.columns[0].example, "later");
        assert_eq!(r.columns[1].example, "x".repeat(60));
        assert!(r.validate().is_ok());
    }

    #[test]
    fn header_only_grid_gives_empty_examples_and_zero_rows() {
        let grid = CellGrid::from_strs("t", &[&["A", "B", "C"]]).unwrap();
        let r = extract_record(&grid, 2).unwrap();
        assert_eq!(r.num_rows, 0);
        assert!(r.columns.iter().all(|c| c.example.is_empty()));
    }

    #[test]
    fn null_header_is_synthesized() {
        let grid = CellGrid::new(
            "t".into(),
            vec![
                vec![Some("A".into()), None],
                vec![Some("1".into()), Some("2".into())],
            ],
        )
        .unwrap();
        let r = extract_record(&grid, 0).unwrap();
        assert_eq!(r.columns[1].header, "col_1");
    }

    #[test]
    fn rejects_ragged_and_empty_grids() {
        assert_eq!(
            CellGrid::new("t".into(), vec![]).unwrap_err(),
            GridError::EmptyGrid
        );
        let ragged = CellGrid::new(
            "t".into(),
            vec![vec![Some("A".into())], vec![Some("1".into()), Some("2".into())]],
        );
        assert!(matches!(ragged.unwrap_err(), GridError::RaggedRow { row: 1, .. }));
    }

    #[test]
    fn long_cells_become_notes_with_shared_placeholders() {
        let long = "z".repeat(150);
        let other = "y".repeat(130);
        let grid = CellGrid::new(
            "t".into(),
            vec![
                vec![Some("Text".into())],
                vec![Some(long.clone())],
                vec![Some(other)],
                vec![Some(long)],
            ],
        )
        .unwrap();
        let out = apply_placeholders(&grid, &PlaceholderPolicy::default());
        assert_eq!(out.cell(1, 0), Some("Note_0001"));
        assert_eq!(out.cell(2, 0), Some("Note_0002"));
        assert_eq!(out.cell(3, 0), Some("Note_0001"));
    }

    #[test]
    fn high_cardinality_column_maps_by_first_occurrence() {
        let mut policy = PlaceholderPolicy {
            min_rows: 3,
            ..PlaceholderPolicy::default()
        };
        policy.prefixes.insert("title".into(), "Movie".into());
        // 8 distinct over 9 values: ratio 0.889 exceeds the 0.8 threshold
        let grid = CellGrid::from_strs(
            "t",
            &[
                &["Title", "Year"],
                &["Alpha", "FY2001"],
                &["Beta", "FY2001"],
                &["Alpha", "FY2001"],
                &["Gamma", "FY2001"],
                &["Delta", "FY2001"],
                &["Epsilon", "FY2001"],
                &["Zeta", "FY2001"],
                &["Eta", "FY2001"],
                &["Theta", "FY2001"],
            ],
        )
        .unwrap();
        let out = apply_placeholders(&grid, &policy);
        assert_eq!(out.cell(1, 0), Some("Movie_0001"));
        assert_eq!(out.cell(2, 0), Some("Movie_0002"));
        assert_eq!(out.cell(3, 0), Some("Movie_0001"));
        assert_eq!(out.cell(4, 0), Some("Movie_0003"));
        assert_eq!(out.cell(9, 0), Some("Movie_0008"));
        // low-cardinality column untouched, headers untouched
        assert_eq!(out.cell(1, 1), Some("FY2001"));
        assert_eq!(out.header(0), Some("Title"));
    }

    #[test]
    fn numeric_columns_are_exempt_from_the_cardinality_rule() {
        let policy = PlaceholderPolicy {
            min_rows: 2,
            ..PlaceholderPolicy::default()
        };
        let grid = CellGrid::from_strs(
            "t",
            &[&["Amount"], &["1.5"], &["2.5"], &["3.5"], &["4.5"]],
        )
        .unwrap();
        let out = apply_placeholders(&grid, &policy);
        assert_eq!(out, grid);
    }

    #[test]
    fn apply_placeholders_is_idempotent() {
        let mut policy = PlaceholderPolicy {
            min_rows: 3,
            ..PlaceholderPolicy::default()
        };
        policy.prefixes.insert("title".into(), "Movie".into());
        let long = "w".repeat(200);
        let grid = CellGrid::new(
            "t".into(),
            vec![
                vec![Some("Title".into()), Some("Notes".into())],
                vec![Some("Alpha".into()), Some(long.clone())],
                vec![Some("Beta".into()), Some("short".into())],
                vec![Some("Gamma".into()), Some(long)],
                vec![Some("Delta".into()), None],
            ],
        )
        .unwrap();
        let once = apply_placeholders(&grid, &policy);
        let twice = apply_placeholders(&once, &policy);
        assert_eq!(once, twice);
    }

    #[test]
    fn extraction_is_pure() {
        let grid = CellGrid::from_strs("t", &[&["A"], &["1"]]).unwrap();
        assert_eq!(
            extract_record(&grid, 5).unwrap(),
            extract_record(&grid, 5).unwrap()
        );
    }
}
