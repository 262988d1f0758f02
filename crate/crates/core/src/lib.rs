//! Hierarchical component analysis for grouped benchmark data.
//!
//! The crate recovers latent capability factors shared across domains
//! (groups of models fine-tuned from the same base model) from per-domain
//! ICA unmixing matrices, and ships the supporting analyses around it:
//! PCA heterogeneity diagnostics, low-rank completion, sigmoid scaling-law
//! fits, and leaderboard ingestion.

pub mod alignment;
pub mod completion;
pub mod data;
pub mod error;
pub mod hca;
pub mod ica;
pub mod ingest;
pub mod linalg;
pub mod matrix_json;
pub mod pipeline;
pub mod scaling;
pub mod scm;
pub mod seed;
pub mod simulate;
pub mod subspace;

pub use error::{Error, ErrorClass, Result};
