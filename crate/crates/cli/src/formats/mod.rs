//! Persistence formats shared by all pipeline stages.

pub mod cache;
pub mod catalog;
pub mod model;

use std::path::PathBuf;

use sheettoken_core::record::{RecordError, SheetId};

pub use cache::{read_token_cache, write_token_cache};
pub use catalog::{
    load_catalog, load_pairs, load_queries, load_splits, store_catalog, store_pairs,
    store_queries, store_splits,
};
pub use model::{
    load_encoder_params, load_retriever_params, store_encoder_params, store_retriever_params,
};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: RecordError,
    },
    #[error("{path}: sheet_id key '{key}' is not a decimal integer")]
    BadKey { path: PathBuf, key: String },
    #[error("{path}: entry {index}: label {label} is outside {{0,1}}")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: i64,
    },
    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: [u8; 4] },
    #[error("{path}: unsupported format version {version}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated: needed {needed} more bytes for {context}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        context: &'static str,
    },
    #[error("{path}: {extra} trailing bytes after declared payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: duplicate sheet_id {id}")]
    DuplicateId { path: PathBuf, id: SheetId },
    #[error("{path}: non-finite value in {context}")]
    NonFinite {
        path: PathBuf,
        context: &'static str,
    },
    #[error("{path}: inconsistent shape for {context}")]
    BadShape {
        path: PathBuf,
        context: &'static str,
    },
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Little-endian cursor over a byte slice with format-aware errors.
pub(crate) struct Cursor<'a> {
    path: &'a std::path::Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(path: &'a std::path::Path, data: &'a [u8]) -> Self {
        Cursor { path, data, pos: 0 }
    }

    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.data.len() {
            return Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                needed: self.pos + n - self.data.len(),
                context,
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(FormatError::BadMagic {
                path: self.path.to_path_buf(),
                expected,
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, context: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32(&mut self, context: &'static str) -> Result<f32, FormatError> {
        let b = self.take(4, context)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.data.len() {
            return Err(FormatError::TrailingBytes {
                path: self.path.to_path_buf(),
                extra: self.data.len() - self.pos,
            });
        }
        Ok(())
    }
}
