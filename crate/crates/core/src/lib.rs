//! Sheet tokens and graph-based sheet-set retrieval.
//!
//! This crate implements the full two-stage pipeline behind the `sheettoken`
//! tools as a pure, `no_std`-compatible library (only `alloc` is required):
//!
//! 1. **Stage 1 — sheet encoder** ([`encoder`]): schema-aware sheet records
//!    are serialized through a deterministic template, hashed into feature
//!    buckets, and projected into unit-norm dense *sheet tokens*. The encoder
//!    is trained on pairwise same-table supervision with label-smoothed
//!    cross-entropy.
//! 2. **Stage 2 — graph retriever** ([`retriever`]): for a query, candidate
//!    sheets form a workspace graph with four adjacency channels (semantic,
//!    query-conditioned, schema, shape). Learnable per-stage mixtures of the
//!    channels are composed by matrix product, node states are refined by
//!    graph convolution, and a query-guided pooling plus a node head produce
//!    set-level and per-sheet relevance. Training combines a contrastive
//!    set-retrieval loss, a positive/negative alignment margin, and node-level
//!    binary supervision.
//!
//! Supporting modules: the shared data model ([`record`]), grid-to-record
//! extraction with typed placeholders ([`extract`]), the synthetic corpus
//! fabricator ([`fabricate`]), a minimal dense-matrix kernel with
//! reverse-mode gradients ([`matrix`], [`autodiff`]), evaluation metrics
//! ([`metrics`]), and an analytic FLOPs estimator ([`flops`]).
//!
//! All computation is deterministic given seeds: collections iterate in
//! sorted order, RNG streams are derived per work item, and no operation
//! depends on thread scheduling. File formats and the CLI live in the
//! companion `sheettoken` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod encoder;
pub mod extract;
pub mod fabricate;
pub mod flops;
pub mod matrix;
pub mod metrics;
pub mod optim;
pub mod record;
pub mod retriever;

pub use autodiff::{Grads, Tape, Var};
pub use encoder::{EncoderConfig, EncoderParams, SerializedSheet};
pub use extract::{CellGrid, PlaceholderPolicy};
pub use fabricate::{FabricatedPair, FabricationConfig, SplitIndices};
pub use matrix::Matrix;
pub use metrics::{Split, TrainLog};
pub use record::{
    ColumnMeta, PairExample, QueryInstance, SheetCatalog, SheetId, SheetRecord, TokenCache,
};
pub use retriever::{
    AdjacencyChannels, RetrievalResult, RetrieverMode, RetrieverParams, Workspace,
};
