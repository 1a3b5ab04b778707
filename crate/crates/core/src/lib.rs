//! Self-explaining hypergraph model for next-visit diagnosis prediction.
//!
//! Each patient is a hypergraph with diagnosis codes as nodes and visits as
//! hyperedges. The model personalises ontology-aware code embeddings by
//! message passing, adds likely false-negative code-visit pairs, extracts K
//! temporal phenotypes (sub-hypergraphs) and predicts the next visit from
//! those phenotypes alone, so edits to a phenotype propagate to the output.

pub mod augmentation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod ehr;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hypergraph;
pub mod model;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod phenotype;
pub mod predictor;
pub mod train;

pub use error::{Error, Result};
