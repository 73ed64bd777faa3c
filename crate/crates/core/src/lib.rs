//! Feed-forward propagation of means and variances through neural networks and
//! sigmoid belief networks.
//!
//! The crate provides closed-form moment maps for common activations and stochastic
//! units, a small layered network runtime with three propagation modes (mean only,
//! mean and variance, Monte-Carlo sampling), training of such networks by gradient
//! descent, Monte-Carlo reference estimates with accuracy metrics, and MNIST ingestion.

pub mod activations;
pub mod andgate;
pub mod data;
pub mod error;
pub mod kernels;
pub mod mc;
pub mod metrics;
pub mod moments;
pub mod network;
pub mod tensor;
pub mod train;

pub use activations::{Activation, Assumption, BernoulliMean, MomentJacobian, SoftmaxVariant, TransformVariance};
pub use data::{Dataset, DatasetStats};
pub use error::{Error, Result};
pub use kernels::RVariant;
pub use mc::MCEstimate;
pub use metrics::AccuracyReport;
pub use moments::{BinaryMoments, ClassPosterior, ScalarMoments};
pub use network::{ForwardRecord, LayerParams, LayerSpec, ModeKind, Network, NetworkConfig, PropagationMode};
pub use tensor::MomentTensor;
pub use train::{GradientBundle, Hyperparams, OptimizerKind, OptimizerState};
