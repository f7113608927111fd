//! Fitting, prediction and the versioned, checksummed artifact container.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ser_core::features::ScalerParams;
use ser_core::Emotion;

use crate::data::{fit_scaler_rows, scale_rows};
use crate::gnb::GnbModel;
use crate::knn::{KnnModel, KnnParams};
use crate::logreg::{LogRegModel, LogRegParams};
use crate::nn::{train, Network, NetworkSpec, TrainConfig, TrainReport};
use crate::tree::{ForestModel, ForestParams, TreeModel, TreeParams};
use crate::{argmax, DesignMatrix, ModelError};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    Gnb,
    Logreg,
    Tree,
    Forest,
    Neural,
}

/// What to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Knn(KnnParams),
    Gnb,
    Logreg(LogRegParams),
    Tree(TreeParams),
    Forest(ForestParams),
    Neural { network: NetworkSpec, train: TrainConfig },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Knn(_) => ModelKind::Knn,
            ModelSpec::Gnb => ModelKind::Gnb,
            ModelSpec::Logreg(_) => ModelKind::Logreg,
            ModelSpec::Tree(_) => ModelKind::Tree,
            ModelSpec::Forest(_) => ModelKind::Forest,
            ModelSpec::Neural { .. } => ModelKind::Neural,
        }
    }

    fn hyperparameters(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("kind");
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Knn(KnnModel),
    Gnb(GnbModel),
    Logreg(LogRegModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Neural { network: Network, report: TrainReport },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u64,
    pub kind: ModelKind,
    pub hyperparameters: serde_json::Value,
    pub scaler: ScalerParams,
    pub label_set: Vec<String>,
    pub payload: Payload,
}

#[derive(Serialize, Deserialize)]
struct ArtifactFile {
    #[serde(flatten)]
    artifact: ModelArtifact,
    checksum: String,
}

fn label_set() -> Vec<String> {
    Emotion::ALL.iter().map(|e| e.name().to_string()).collect()
}

/// Fits a scaler on `train`, then the model on the scaled rows.
pub fn fit_model(spec: &ModelSpec, train_data: &DesignMatrix) -> Result<ModelArtifact, ModelError> {
    train_data.validate()?;
    let scaler = fit_scaler_rows(train_data.x.view(), "train")?;
    let xs = scale_rows(&scaler, train_data.x.view())?;
    let y = &train_data.y;
    let payload = match spec {
        ModelSpec::Knn(p) => Payload::Knn(KnnModel::fit(p.clone(), xs.view(), y)?),
        ModelSpec::Gnb => Payload::Gnb(GnbModel::fit(xs.view(), y)?),
        ModelSpec::Logreg(p) => Payload::Logreg(LogRegModel::fit(p.clone(), xs.view(), y)?),
        ModelSpec::Tree(p) => Payload::Tree(TreeModel::fit(p.clone(), xs.view(), y)?),
        ModelSpec::Forest(p) => Payload::Forest(ForestModel::fit(p.clone(), xs.view(), y)?),
        ModelSpec::Neural { network, train: cfg } => {
            let mut net = Network::init(network.clone(), cfg.seed)?;
            let x = net.rows_to_input(&xs)?;
            let report = train(&mut net, &x, y, cfg)?;
            Payload::Neural { network: net, report }
        }
    };
    Ok(ModelArtifact {
        format_version: FORMAT_VERSION,
        kind: spec.kind(),
        hyperparameters: spec.hyperparameters(),
        scaler,
        label_set: label_set(),
        payload,
    })
}

impl ModelArtifact {
    pub fn n_features(&self) -> usize {
        self.scaler.dim()
    }

    fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("artifact serializes")
    }

    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.canonical_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short stable identifier derived from the checksum.
    pub fn model_id(&self) -> String {
        format!("{:?}-{}", self.kind, &self.checksum()[..12]).to_lowercase()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = ArtifactFile {
            artifact: self.clone(),
            checksum: self.checksum(),
        };
        let mut out = serde_json::to_vec_pretty(&file).expect("artifact serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| {
            ModelError::Integrity(format!(
                "checksum mismatch: the artifact is truncated or corrupted and cannot be parsed ({e})"
            ))
        })?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ModelError::Format("missing format_version".into()))?;
        if found != FORMAT_VERSION {
            return Err(ModelError::Version {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let file: ArtifactFile = serde_json::from_value(value).map_err(|e| ModelError::Format(e.to_string()))?;
        let computed = file.artifact.checksum();
        if computed != file.checksum {
            return Err(ModelError::Integrity(format!(
                "checksum mismatch: stored {}, computed {computed}",
                file.checksum
            )));
        }
        Ok(file.artifact)
    }
}

pub fn save_artifact(artifact: &ModelArtifact, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, artifact.to_json()).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    ModelArtifact::from_json(&bytes)
}

/// Class probabilities `(n, 7)` for raw (unscaled) rows.
pub fn predict_proba(artifact: &ModelArtifact, rows: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
    let xs = scale_rows(&artifact.scaler, rows)?;
    match &artifact.payload {
        Payload::Knn(m) => m.predict_proba(xs.view()),
        Payload::Gnb(m) => m.predict_proba(xs.view()),
        Payload::Logreg(m) => m.predict_proba(xs.view()),
        Payload::Tree(m) => m.predict_proba(xs.view()),
        Payload::Forest(m) => m.predict_proba(xs.view()),
        Payload::Neural { network, .. } => network.predict(&network.rows_to_input(&xs)?),
    }
}

/// Hard labels: argmax with the lowest code winning ties.
pub fn predict_labels(artifact: &ModelArtifact, rows: ArrayView2<f64>) -> Result<Vec<usize>, ModelError> {
    let p = predict_proba(artifact, rows)?;
    Ok(p.rows().into_iter().map(|r| argmax(r.as_slice().expect("row-major"))).collect())
}
