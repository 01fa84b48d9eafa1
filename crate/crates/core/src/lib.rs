//! Verification benchmark engine for face embeddings: exact TPR at very low
//! FPR over all pairs of large embedding sets, margin-based training loss,
//! synthetic benchmarks with a brute-force oracle, and submission gating.

// `!(x < bound)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod gate;
pub mod io;
pub mod margin;
pub mod metrics;
pub mod simsel;
pub mod syngen;
pub mod types;

pub use error::{Error, Result};
pub use types::{EmbeddingSet, Group, ImageRecord, Manifest, Pairing, ProtocolSpec, RecordFilter, Role};
