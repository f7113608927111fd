//! Multinomial logistic regression trained by full-batch gradient descent.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::check_width;
use crate::{ModelError, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the weights (not the biases).
    pub l2: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 1000,
            l2: 1e-4,
        }
    }
}

impl LogRegParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Parameter("logreg learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(ModelError::Parameter("logreg epochs must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(ModelError::Parameter("logreg l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub params: LogRegParams,
    /// `d × N_CLASSES`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub loss_trace: Vec<f64>,
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - top).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

/// Mean cross-entropy plus `l2/2 · ||W||²`, and its gradient.
pub fn loss_and_grad(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let logits = x.dot(weights) + bias;
    let mut p = softmax_rows(&logits);
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        loss -= p[[i, c]].max(f64::MIN_POSITIVE).ln();
        p[[i, c]] -= 1.0;
    }
    loss = loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    p.mapv_inplace(|v| v / n);
    let gw = x.t().dot(&p) + weights * l2;
    let gb = p.sum_axis(Axis(0));
    (loss, gw, gb)
}

impl LogRegModel {
    pub fn fit(params: LogRegParams, x: ArrayView2<f64>, y: &[usize]) -> Result<Self, ModelError> {
        params.validate()?;
        let d = x.ncols();
        let mut weights = Array2::zeros((d, N_CLASSES));
        let mut bias = Array1::zeros(N_CLASSES);
        let mut loss_trace = Vec::with_capacity(params.epochs);
        for epoch in 0..params.epochs {
            let (loss, gw, gb) = loss_and_grad(&weights, &bias, x, y, params.l2);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { step: epoch, loss });
            }
            loss_trace.push(loss);
            weights.scaled_add(-params.learning_rate, &gw);
            bias.scaled_add(-params.learning_rate, &gb);
        }
        Ok(Self {
            params,
            weights,
            bias,
            loss_trace,
        })
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        check_width(self.weights.nrows(), x)?;
        Ok(softmax_rows(&(x.dot(&self.weights) + &self.bias)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            x[[i, 0]] = sign * rng.random_range(0.5..2.0);
            x[[i, 1]] = rng.random_range(-1.0..1.0);
            y.push(c * 3);
        }
        (x, y)
    }

    #[test]
    fn separable_set_reaches_full_training_accuracy() {
        let (x, y) = separable(20, 3);
        let m = LogRegModel::fit(
            LogRegParams {
                epochs: 500,
                ..Default::default()
            },
            x.view(),
            &y,
        )
        .unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        for (i, &c) in y.iter().enumerate() {
            assert_eq!(crate::argmax(&p.row(i).to_vec()), c);
        }
        assert!(m.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 15;
        let d = 4;
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..N_CLASSES)).collect();
        let h = 1e-6;
        for _ in 0..10 {
            let w = Array2::from_shape_fn((d, N_CLASSES), |_| rng.random_range(-1.0..1.0));
            let b = Array1::from_shape_fn(N_CLASSES, |_| rng.random_range(-1.0..1.0));
            let (_, gw, gb) = loss_and_grad(&w, &b, x.view(), &y, 1e-2);
            let rel = |a: f64, num: f64| (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            for j in 0..d {
                for c in 0..N_CLASSES {
                    let mut wp = w.clone();
                    wp[[j, c]] += h;
                    let mut wm = w.clone();
                    wm[[j, c]] -= h;
                    let num = (loss_and_grad(&wp, &b, x.view(), &y, 1e-2).0
                        - loss_and_grad(&wm, &b, x.view(), &y, 1e-2).0)
                        / (2.0 * h);
                    assert!(rel(gw[[j, c]], num) <= 1e-5, "w[{j},{c}] {} vs {num}", gw[[j, c]]);
                }
            }
            for c in 0..N_CLASSES {
                let mut bp = b.clone();
                bp[c] += h;
                let mut bm = b.clone();
                bm[c] -= h;
                let num = (loss_and_grad(&w, &bp, x.view(), &y, 1e-2).0 - loss_and_grad(&w, &bm, x.view(), &y, 1e-2).0)
                    / (2.0 * h);
                assert!(rel(gb[c], num) <= 1e-5);
            }
        }
    }

    #[test]
    fn parameter_validation() {
        let (x, y) = separable(4, 1);
        for bad in [
            LogRegParams {
                learning_rate: 0.0,
                ..Default::default()
            },
            LogRegParams {
                epochs: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(LogRegModel::fit(bad, x.view(), &y), Err(ModelError::Parameter(_))));
        }
    }
}
