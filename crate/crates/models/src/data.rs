use ndarray::{Array2, ArrayView2};
use ser_core::features::cache::FeatureRow;
use ser_core::features::ScalerParams;

use crate::{ModelError, N_CLASSES};

/// Rows of features with their class codes and utterance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub ids: Vec<String>,
}

impl DesignMatrix {
    pub fn new(x: Array2<f64>, y: Vec<usize>, ids: Vec<String>) -> Result<Self, ModelError> {
        let m = Self { x, y, ids };
        m.validate()?;
        Ok(m)
    }

    /// Builds from row vectors; ids default to the row index.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<usize>) -> Result<Self, ModelError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ModelError::Shape("rows have differing lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| ModelError::Shape(e.to_string()))?;
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(x, y, ids)
    }

    pub fn from_feature_rows(rows: &[FeatureRow]) -> Result<Self, ModelError> {
        let vecs: Vec<Vec<f64>> = rows.iter().map(|r| r.values.values().to_vec()).collect();
        let mut m = Self::from_rows(&vecs, rows.iter().map(|r| r.label.code()).collect())?;
        m.ids = rows.iter().map(|r| r.utt_id.clone()).collect();
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.x.nrows();
        if n == 0 {
            return Err(ModelError::Data("design matrix has no rows".into()));
        }
        if self.y.len() != n || self.ids.len() != n {
            return Err(ModelError::Shape(format!(
                "{n} rows but {} labels and {} ids",
                self.y.len(),
                self.ids.len()
            )));
        }
        if let Some(&bad) = self.y.iter().find(|&&c| c >= N_CLASSES) {
            return Err(ModelError::Data(format!("label code {bad} outside 0..{N_CLASSES}")));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Data("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(ndarray::Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }
}

/// Per-column standardization with fitted parameters.
pub fn scale_rows(params: &ScalerParams, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
    if x.ncols() != params.dim() {
        return Err(ModelError::Shape(format!(
            "scaler expects {} features, got {}",
            params.dim(),
            x.ncols()
        )));
    }
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - params.mean[j]) / params.std[j];
        }
    }
    Ok(out)
}

pub fn fit_scaler_rows(x: ArrayView2<f64>, fitted_on: &str) -> Result<ScalerParams, ModelError> {
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(ser_core::features::fit_scaler(&rows, fitted_on)?)
}

pub(crate) fn check_width(expected: usize, x: ArrayView2<f64>) -> Result<(), ModelError> {
    if x.ncols() != expected {
        return Err(ModelError::Shape(format!("model expects {expected} features, got {}", x.ncols())));
    }
    Ok(())
}
