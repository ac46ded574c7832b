//! Embedding-space classification and open-set rejection.
//!
//! A small MLP (input -> 256 ReLU -> C softmax, Adam, L2 penalty) classifies
//! the unit-norm embeddings. For open-set operation, every class gets a
//! univariate Gaussian over the distance between its validation embeddings
//! and its training mean vector; a test embedding whose distance is unlikely
//! under the predicted class's Gaussian is rejected as an outlier.

mod gaussian;
mod mlp;

pub use gaussian::{fit_class_gaussians, reject_decision, ClassGaussian, Decision, GaussianSet};
pub use mlp::{train_mlp, MlpModel};

/// Sentinel label emitted in place of a class when an example is rejected
/// as an outlier.
pub const REJECTED_LABEL: &str = "REJECED_OUTLIER";
