//! WAV-in, probabilities-out inference and its HTTP front end.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use ser_core::audio_io::{decode_wav, AudioError};
use ser_core::features::{extract_feature_vector, FeatureConfig};
use ser_core::preprocess::{meets_min_duration, prepare_clip, PreprocessConfig};
use ser_core::{Emotion, FEATURE_DIM};
use ser_models::{argmax, predict_proba, ModelArtifact};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub probabilities: BTreeMap<Emotion, f64>,
    pub predicted: Emotion,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictError {
    /// The body is not a WAV file we can decode.
    NotWav(String),
    /// Decoded but unusable (empty or too short after preprocessing).
    Unprocessable(String),
    Internal(String),
}

/// Owned model plus the preprocessing it expects. Shared read-only.
#[derive(Debug)]
pub struct Predictor {
    artifact: ModelArtifact,
    model_id: String,
    preprocess: PreprocessConfig,
    features: FeatureConfig,
}

impl Predictor {
    pub fn new(artifact: ModelArtifact, preprocess: PreprocessConfig, features: FeatureConfig) -> anyhow::Result<Self> {
        if artifact.n_features() != FEATURE_DIM {
            anyhow::bail!(
                "model expects {} features; WAV inference needs a {FEATURE_DIM}-feature model",
                artifact.n_features()
            );
        }
        Ok(Self {
            model_id: artifact.model_id(),
            artifact,
            preprocess,
            features,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn predict_wav(&self, bytes: &[u8]) -> Result<PredictionResponse, PredictError> {
        if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
            return Err(PredictError::NotWav("body is not a RIFF/WAVE file".into()));
        }
        let clip = match decode_wav(bytes) {
            Ok(c) => c,
            Err(AudioError::EmptyAudio) => return Err(PredictError::Unprocessable("audio contains no samples".into())),
            Err(e) => return Err(PredictError::NotWav(e.to_string())),
        };
        let clip = match prepare_clip(&clip, &self.preprocess) {
            Ok(c) if !c.is_empty() => c,
            Ok(_) | Err(AudioError::EmptyAudio) => {
                return Err(PredictError::Unprocessable("clip is empty after preprocessing".into()))
            }
            Err(e) => return Err(PredictError::Internal(e.to_string())),
        };
        if !meets_min_duration(&clip, &self.preprocess) {
            return Err(PredictError::Unprocessable(format!(
                "clip lasts {:.3} s after preprocessing; at least {} s is required",
                clip.duration_secs(),
                self.preprocess.min_duration_s
            )));
        }
        let v = extract_feature_vector(&clip, &self.features).map_err(|e| PredictError::Internal(e.to_string()))?;
        let row = Array2::from_shape_vec((1, FEATURE_DIM), v.values().to_vec()).expect("one row");
        let p = predict_proba(&self.artifact, row.view()).map_err(|e| PredictError::Internal(e.to_string()))?;
        let p: Vec<f64> = p.row(0).to_vec();
        Ok(PredictionResponse {
            probabilities: Emotion::ALL.iter().map(|&e| (e, p[e.code()])).collect(),
            predicted: Emotion::ALL[argmax(&p)],
            model_id: self.model_id.clone(),
        })
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(ErrorBody { error: message, id: None })).into_response()
}

fn internal(detail: &str) -> Response {
    let id = uuid::Uuid::new_v4().simple().to_string();
    eprintln!("internal error {id}: {detail}");
    let body = ErrorBody {
        error: "internal error".into(),
        id: Some(id),
    };
    (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
}

async fn health(State(p): State<Arc<Predictor>>) -> Response {
    Json(serde_json::json!({ "status": "ok", "model_id": p.model_id() })).into_response()
}

async fn predict(State(p): State<Arc<Predictor>>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || p.predict_wav(&body)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(PredictError::NotWav(m))) => error(StatusCode::UNSUPPORTED_MEDIA_TYPE, m),
        Ok(Err(PredictError::Unprocessable(m))) => error(StatusCode::UNPROCESSABLE_ENTITY, m),
        Ok(Err(PredictError::Internal(m))) => internal(&m),
        Err(e) => internal(&e.to_string()),
    }
}

pub fn router(predictor: Arc<Predictor>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(predictor)
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(predictor: Arc<Predictor>, addr: &str, max_body_bytes: usize) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving model {} on http://{}", predictor.model_id(), listener.local_addr()?);
    axum::serve(listener, router(predictor, max_body_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
