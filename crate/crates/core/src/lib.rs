//! Hybrid graph-convolution / gated-recurrent anomaly detection for
//! cryptocurrency transaction streams.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`] dense tensors, activations, loss, initialisation, Adam and a
//!   central-difference gradient oracle;
//! * [`dataio`] transaction file ingestion, cleaning, feature engineering,
//!   min-max scaling, chronological splitting, sliding windows and a synthetic
//!   transaction generator;
//! * [`graphbuild`] the k-NN correlation graph and its normalised adjacency;
//! * [`models`] GCN, GRU, 1-D CNN and softmax head layers and the five neural
//!   architectures composed from them;
//! * [`forest`] the Random Forest baseline;
//! * [`metrics`] confusion statistics and ROC AUC;
//! * [`runner`] configuration, training, checkpoints, reports and the CLI.
//!
//! Model math is generic over the scalar type (`f32`/`f64`) through
//! [`Scalar`]; the experiment pipeline runs in `f64` and the aliases below
//! name the concrete types it uses.

pub mod dataio;
pub mod error;
pub mod forest;
pub mod graphbuild;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod runner;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense tensor in the pipeline's working precision.
pub type Tensor = numcore::Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = numcore::Tensor<f32>;
/// Normalized adjacency in the pipeline's working precision.
pub type NormalizedGraph = graphbuild::NormalizedGraph<f64>;
/// Raw (unnormalized) adjacency in the pipeline's working precision.
pub type SparseAdjacency = graphbuild::SparseAdjacency<f64>;
/// Neural model in the pipeline's working precision.
pub type Model = models::Model<f64>;
/// Random Forest over `f64` features.
pub type Forest = forest::Forest<f64>;
/// Adam state for an `f64` parameter tensor.
pub type AdamState = numcore::AdamState<f64>;
