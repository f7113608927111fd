//! Feature cache CSV (`utt_id,label,f000..f093`) and scaler JSON files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{FeatureVector, ScalerParams, FEATURE_DIM};
use crate::corpus::Emotion;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("feature file {path}, line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub utt_id: String,
    pub label: Emotion,
    pub values: FeatureVector,
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros trimmed.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

pub fn header() -> Vec<String> {
    let mut h = vec!["utt_id".to_string(), "label".to_string()];
    h.extend((0..FEATURE_DIM).map(|i| format!("f{i:03}")));
    h
}

pub fn write_features<W: Write>(out: W, rows: &[FeatureRow]) -> Result<(), CacheError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for row in rows {
        let mut rec = vec![row.utt_id.clone(), row.label.name().to_string()];
        rec.extend(row.values.values().iter().map(|v| format_sig9(*v)));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| CacheError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn save_features(path: &Path, rows: &[FeatureRow]) -> Result<(), CacheError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_features(BufWriter::new(f), rows)
}

fn io_err(path: &Path, source: std::io::Error) -> CacheError {
    CacheError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_features<R: Read>(input: R, name: &str) -> Result<Vec<FeatureRow>, CacheError> {
    let mut r = csv::Reader::from_reader(input);
    let expected = header();
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(CacheError::Parse {
            path: name.into(),
            line: 1,
            message: format!("header must be utt_id,label,f000..f{:03}", FEATURE_DIM - 1),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse_err = |message: String| CacheError::Parse {
            path: name.into(),
            line,
            message,
        };
        let label: Emotion = rec[1].parse().map_err(|e: String| parse_err(e))?;
        let mut values = [0.0; FEATURE_DIM];
        for (d, slot) in values.iter_mut().enumerate() {
            let field = &rec[d + 2];
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("column f{d:03}: '{field}' is not a finite number")))?;
        }
        rows.push(FeatureRow {
            utt_id: rec[0].to_string(),
            label,
            values: FeatureVector::new(values),
        });
    }
    Ok(rows)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRow>, CacheError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_features(f, &path.display().to_string())
}

pub fn save_scaler(path: &Path, params: &ScalerParams) -> Result<(), CacheError> {
    let text = serde_json::to_string_pretty(params)?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn load_scaler(path: &Path) -> Result<ScalerParams, CacheError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let params: ScalerParams = serde_json::from_str(&text)?;
    params.validate().map_err(|e| CacheError::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(params)
}
