use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairwise_sum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalerError {
    #[error("scaler needs at least 2 vectors, got {0}")]
    InsufficientData(usize),
    #[error("vector {index} has {got} dimensions, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("malformed scaler: {0}")]
    Malformed(String),
}

/// Per-dimension standardization parameters.
///
/// The dimension is not fixed at 94 so the same scaler also serves
/// embedding heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted_on: String,
}

const MIN_STD: f64 = 1e-12;

impl ScalerParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Identity transform of the given width.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            fitted_on: "identity".into(),
        }
    }

    pub fn validate(&self) -> Result<(), ScalerError> {
        if self.mean.len() != self.std.len() {
            return Err(ScalerError::Malformed(format!(
                "mean has {} entries, std has {}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(ScalerError::Malformed("std must be positive and all values finite".into()));
        }
        Ok(())
    }
}

/// Sample mean and population standard deviation per dimension (pairwise
/// summation). Dimensions with std below 1e-12 get std 1.
pub fn fit_scaler<V: AsRef<[f64]>>(vectors: &[V], fitted_on: &str) -> Result<ScalerParams, ScalerError> {
    if vectors.len() < 2 {
        return Err(ScalerError::InsufficientData(vectors.len()));
    }
    let dim = vectors[0].as_ref().len();
    for (index, v) in vectors.iter().enumerate() {
        if v.as_ref().len() != dim {
            return Err(ScalerError::Dimension {
                index,
                got: v.as_ref().len(),
                expected: dim,
            });
        }
    }
    let n = vectors.len() as f64;
    let mut mean = Vec::with_capacity(dim);
    let mut std = Vec::with_capacity(dim);
    let mut column = vec![0.0; vectors.len()];
    for d in 0..dim {
        for (slot, v) in column.iter_mut().zip(vectors) {
            *slot = v.as_ref()[d];
        }
        let m = pairwise_sum(&column) / n;
        for slot in column.iter_mut() {
            *slot = (*slot - m) * (*slot - m);
        }
        let s = (pairwise_sum(&column) / n).sqrt();
        mean.push(m);
        std.push(if s < MIN_STD { 1.0 } else { s });
    }
    Ok(ScalerParams {
        mean,
        std,
        fitted_on: fitted_on.to_string(),
    })
}

/// `(v - mean) / std` elementwise.
pub fn apply_scaler(params: &ScalerParams, v: &[f64]) -> Result<Vec<f64>, ScalerError> {
    if v.len() != params.dim() {
        return Err(ScalerError::Dimension {
            index: 0,
            got: v.len(),
            expected: params.dim(),
        });
    }
    Ok(v.iter()
        .zip(params.mean.iter().zip(&params.std))
        .map(|(x, (m, s))| (x - m) / s)
        .collect())
}

/// Inverse of [`apply_scaler`].
pub fn invert_scaler(params: &ScalerParams, z: &[f64]) -> Result<Vec<f64>, ScalerError> {
    if z.len() != params.dim() {
        return Err(ScalerError::Dimension {
            index: 0,
            got: z.len(),
            expected: params.dim(),
        });
    }
    Ok(z.iter()
        .zip(params.mean.iter().zip(&params.std))
        .map(|(x, (m, s))| x * s + m)
        .collect())
}
