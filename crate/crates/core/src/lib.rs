//! Meta-learned per-example loss re-weighting for graph convolutional
//! networks on class-imbalanced node classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense and CSR matrices
//! - [`graph`]: k-NN graph construction and the normalized propagation matrix
//! - [`model`]: GCN / MLP forward, backward and forward-mode passes
//! - [`loss`], [`metrics`]: cross-entropy losses and evaluation metrics
//! - [`trainer`]: the meta re-weighting loop and the plain / class-weighted baselines
//! - [`data`]: dataset ingestion, splitting, meta-set sampling and SMOTE
//! - [`experiment`]: multi-seed orchestration and reporting
//! - [`gradcheck`]: finite-difference checks of every analytic gradient

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
