//! Enzyme function annotation from protein sequences.
//!
//! A dataset pipeline builds chronological benchmarks from flat protein
//! tables, an embedding layer turns sequences into fixed-width vectors, and
//! three learning agents (enzyme/non-enzyme KNN, function-count boosted
//! trees, extreme multi-label EC classifier over an HNSW shortlist) are
//! combined with a sequence-alignment fallback by a greedily tuned
//! integration policy.
//!
//! Numeric components are generic over [`Real`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar used by the annotation
//! pipeline and model bundles.

pub mod agents;
pub mod align;
pub mod ann;
pub mod annotate;
pub mod bundle;
mod codec;
pub mod dataset;
pub mod ec;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod integrator;
pub mod linear;
pub mod record;
pub mod scalar;
pub mod synthetic;

pub use ec::{EcNumber, LabelDictionary};
pub use error::{Error, Result};
pub use record::{Prediction, ProteinRecord, Source};
pub use scalar::Real;

/// Scalar used by the annotation pipeline and persisted bundles.
pub type Scalar = f32;

pub type EmbeddingTable = embedding::EmbeddingTable<Scalar>;
pub type AnnIndex = ann::Hnsw<Scalar>;
