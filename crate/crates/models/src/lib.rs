//! Classifiers for the 94-dim feature vectors and for precomputed
//! embeddings: KNN, Gaussian naive Bayes, logistic regression, CART trees,
//! random forests, and a small neural engine with hand-written backprop.
//!
//! Every fitted model travels as a [`ModelArtifact`], which bundles the
//! feature scaler it was trained with.

pub mod artifact;
pub mod data;
pub mod gnb;
pub mod grid;
pub mod knn;
pub mod logreg;
pub mod nn;
pub mod tree;

use thiserror::Error;

pub use artifact::{fit_model, load_artifact, predict_labels, predict_proba, save_artifact, ModelArtifact, ModelKind, ModelSpec};
pub use data::DesignMatrix;

pub use ser_core::corpus::N_CLASSES;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("artifact format version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("artifact integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scaler(#[from] ser_core::features::ScalerError),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
