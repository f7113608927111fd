//! Gaussian naive Bayes with log-space posteriors.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::check_width;
use crate::{ModelError, N_CLASSES};

pub const VAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    /// Class priors; zero for classes absent from training.
    pub priors: [f64; N_CLASSES],
    /// `N_CLASSES × d`; rows of absent classes are zero.
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

impl GnbModel {
    pub fn fit(x: ArrayView2<f64>, y: &[usize]) -> Result<Self, ModelError> {
        let (n, d) = x.dim();
        if n == 0 || y.len() != n {
            return Err(ModelError::Shape(format!("{n} rows, {} labels", y.len())));
        }
        let mut counts = [0usize; N_CLASSES];
        let mut means = Array2::zeros((N_CLASSES, d));
        for (row, &c) in x.rows().into_iter().zip(y) {
            counts[c] += 1;
            let mut m = means.row_mut(c);
            m += &row;
        }
        for c in 0..N_CLASSES {
            if counts[c] > 0 {
                means.row_mut(c).mapv_inplace(|v| v / counts[c] as f64);
            }
        }
        let mut variances = Array2::zeros((N_CLASSES, d));
        for (row, &c) in x.rows().into_iter().zip(y) {
            for j in 0..d {
                let diff = row[j] - means[[c, j]];
                variances[[c, j]] += diff * diff;
            }
        }
        for c in 0..N_CLASSES {
            if counts[c] > 0 {
                variances
                    .row_mut(c)
                    .mapv_inplace(|v: f64| (v / counts[c] as f64).max(VAR_FLOOR));
            }
        }
        let priors = counts.map(|k| k as f64 / n as f64);
        Ok(Self {
            priors,
            means,
            variances,
        })
    }

    /// Unnormalized log joint `ln P(c) + Σ ln N(x_j; μ, σ²)`; `-inf` for
    /// classes with zero prior.
    pub fn log_joint(&self, q: &[f64]) -> [f64; N_CLASSES] {
        let mut out = [f64::NEG_INFINITY; N_CLASSES];
        for (c, slot) in out.iter_mut().enumerate() {
            if self.priors[c] == 0.0 {
                continue;
            }
            let mut s = self.priors[c].ln();
            for (j, &v) in q.iter().enumerate() {
                let var = self.variances[[c, j]];
                let diff = v - self.means[[c, j]];
                s -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + diff * diff / var);
            }
            *slot = s;
        }
        out
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        check_width(self.means.ncols(), x)?;
        let mut out = Array2::zeros((x.nrows(), N_CLASSES));
        for (i, row) in x.rows().into_iter().enumerate() {
            let lj = self.log_joint(&row.to_vec());
            let top = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps = lj.map(|v| (v - top).exp());
            let z: f64 = exps.iter().sum();
            for c in 0..N_CLASSES {
                out[[i, c]] = exps[c] / z;
            }
        }
        Ok(out)
    }
}
