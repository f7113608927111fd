//! k-nearest neighbors over (already scaled) feature rows.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::check_width;
use crate::{ModelError, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// Votes weighted by 1/distance; exact matches take all the weight.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
    pub weighting: Weighting,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: 5,
            weighting: Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub params: KnnParams,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl KnnModel {
    pub fn fit(params: KnnParams, x: ArrayView2<f64>, y: &[usize]) -> Result<Self, ModelError> {
        if params.k == 0 {
            return Err(ModelError::Parameter("knn k must be at least 1".into()));
        }
        Ok(Self {
            params,
            x: x.to_owned(),
            y: y.to_vec(),
        })
    }

    /// Indices of the k nearest training rows, nearest first; equal
    /// distances are ordered by row index.
    pub fn neighbors(&self, q: ArrayView1<f64>) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i, sq_dist(q, r)))
            .collect();
        let k = self.params.k.min(d.len());
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d
    }

    fn row_proba(&self, q: ArrayView1<f64>) -> [f64; N_CLASSES] {
        let nn = self.neighbors(q);
        let mut votes = [0.0; N_CLASSES];
        match self.params.weighting {
            Weighting::Uniform => {
                for &(i, _) in &nn {
                    votes[self.y[i]] += 1.0;
                }
            }
            Weighting::Distance => {
                if nn.iter().any(|&(_, d)| d == 0.0) {
                    for &(i, d) in &nn {
                        if d == 0.0 {
                            votes[self.y[i]] += 1.0;
                        }
                    }
                } else {
                    for &(i, d) in &nn {
                        votes[self.y[i]] += 1.0 / d.sqrt();
                    }
                }
            }
        }
        let total: f64 = votes.iter().sum();
        votes.map(|v| v / total)
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        check_width(self.x.ncols(), x)?;
        let rows: Vec<[f64; N_CLASSES]> = x
            .rows()
            .into_iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| self.row_proba(r.view()))
            .collect();
        Ok(Array2::from_shape_fn((rows.len(), N_CLASSES), |(i, c)| rows[i][c]))
    }
}
