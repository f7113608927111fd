//! Precomputed utterance embeddings (JSON Lines) and sequence pooling.

use std::io::BufRead;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use ser_core::Emotion;

use crate::{DesignMatrix, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub utt_id: String,
    pub label: Emotion,
    pub emb_a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emb_b: Option<Vec<f64>>,
}

/// Mean over the time axis of each sequence, concatenated `[a | b]`.
pub fn concat_pool(seq_a: ArrayView2<f64>, seq_b: Option<ArrayView2<f64>>) -> Result<Vec<f64>, ModelError> {
    let pool = |s: ArrayView2<f64>| {
        if s.nrows() == 0 || s.ncols() == 0 {
            Err(ModelError::Data("cannot pool an empty sequence".into()))
        } else {
            Ok(s.mean_axis(Axis(0)).expect("non-empty").to_vec())
        }
    };
    let mut out = pool(seq_a)?;
    if let Some(b) = seq_b {
        out.extend(pool(b)?);
    }
    Ok(out)
}

/// Reads embedding records; every record must have the same `emb_a`
/// width and either all or none carry `emb_b` of a fixed width.
pub fn read_embeddings<R: BufRead>(input: R) -> Result<Vec<EmbeddingRecord>, ModelError> {
    let mut out: Vec<EmbeddingRecord> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ModelError::Io {
            path: "<embeddings>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| ModelError::Format(format!("embedding line {}: {e}", i + 1)))?;
        if let Some(first) = out.first() {
            let dims = |r: &EmbeddingRecord| (r.emb_a.len(), r.emb_b.as_ref().map(Vec::len));
            if dims(first) != dims(&rec) {
                return Err(ModelError::Shape(format!(
                    "embedding line {}: dimensions {:?} differ from {:?}",
                    i + 1,
                    dims(&rec),
                    dims(first)
                )));
            }
        }
        if rec.emb_a.is_empty() || rec.emb_a.iter().chain(rec.emb_b.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(ModelError::Data(format!("embedding line {}: empty or non-finite values", i + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Widths `(dim_a, dim_b)` of a record set.
pub fn embedding_dims(records: &[EmbeddingRecord]) -> Option<(usize, Option<usize>)> {
    records
        .first()
        .map(|r| (r.emb_a.len(), r.emb_b.as_ref().map(Vec::len)))
}

/// Rows `[emb_a | emb_b]` with labels.
pub fn embeddings_to_design(records: &[EmbeddingRecord]) -> Result<DesignMatrix, ModelError> {
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut v = r.emb_a.clone();
            if let Some(b) = &r.emb_b {
                v.extend(b);
            }
            v
        })
        .collect();
    let mut m = DesignMatrix::from_rows(&rows, records.iter().map(|r| r.label.code()).collect())?;
    m.ids = records.iter().map(|r| r.utt_id.clone()).collect();
    Ok(m)
}

pub fn rows_of(records: &[EmbeddingRecord]) -> Result<Array2<f64>, ModelError> {
    Ok(embeddings_to_design(records)?.x)
}
