//! The 94-dimension utterance descriptor, its standard scaler, spectrogram
//! images and the feature cache file.
//!
//! Vector layout (fixed):
//!
//! | index   | feature                     |
//! |---------|-----------------------------|
//! | 0–11    | chroma (C … B)              |
//! | 12–71   | mel band energies (60)      |
//! | 72–91   | MFCC 0–19                   |
//! | 92      | zero-crossing rate          |
//! | 93      | spectral centroid (Hz)      |
//!
//! Every per-frame quantity is averaged over frames.

pub mod cache;
pub mod image;
mod scaler;
mod spectrum;

use serde::{Deserialize, Serialize};

use crate::audio_io::{normalize_amplitude, AudioClip, AudioError};

pub use scaler::{apply_scaler, fit_scaler, invert_scaler, ScalerError, ScalerParams};
pub use spectrum::{
    chroma, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, mfcc, pitch_class, spectral_centroid, stft,
    zero_crossing_rate, Grid, SpectrogramMatrix, CHROMA_MIN_HZ, LOG_FLOOR,
};
pub use self::image::{jet, spectrogram_image, RgbImage, IMAGE_HOP_MS, IMAGE_NFFT, IMAGE_WIN_MS};

pub const N_CHROMA: usize = 12;
pub const N_MELS: usize = 60;
pub const N_MFCC: usize = 20;
pub const FEATURE_DIM: usize = N_CHROMA + N_MELS + N_MFCC + 2;

pub const CHROMA_RANGE: std::ops::Range<usize> = 0..12;
pub const MEL_RANGE: std::ops::Range<usize> = 12..72;
pub const MFCC_RANGE: std::ops::Range<usize> = 72..92;
pub const ZCR_INDEX: usize = 92;
pub const CENTROID_INDEX: usize = 93;

/// Analysis parameters for the utterance-level features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub win_ms: f64,
    pub hop_ms: f64,
    pub nfft: usize,
    pub centered: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            win_ms: 32.0,
            hop_ms: 10.0,
            nfft: 512,
            centered: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.win_ms > 0.0 && self.hop_ms > 0.0) || self.nfft < 2 {
            return Err(AudioError::Parameter(
                "feature window, hop and nfft must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector([f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn new(values: [f64; FEATURE_DIM]) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64; FEATURE_DIM] {
        &self.0
    }

    pub fn chroma(&self) -> &[f64] {
        &self.0[CHROMA_RANGE]
    }

    pub fn mel(&self) -> &[f64] {
        &self.0[MEL_RANGE]
    }

    pub fn mfcc(&self) -> &[f64] {
        &self.0[MFCC_RANGE]
    }

    pub fn zcr(&self) -> f64 {
        self.0[ZCR_INDEX]
    }

    pub fn centroid(&self) -> f64 {
        self.0[CENTROID_INDEX]
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; FEATURE_DIM] = v
            .try_into()
            .map_err(|v: Vec<f64>| format!("feature vector needs {FEATURE_DIM} values, got {}", v.len()))?;
        Ok(Self(arr))
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0.to_vec()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Computes the 94-dim vector. The clip is peak-normalized first, so the
/// result does not depend on input gain.
pub fn extract_feature_vector(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureVector, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let clip = normalize_amplitude(clip);
    let spec = stft(&clip, cfg.win_ms, cfg.hop_ms, cfg.nfft, cfg.centered)?;
    let mel = mel_spectrogram(&spec, N_MELS);
    let mfccs = mfcc(&mel, N_MFCC);
    let chroma = chroma(&spec);
    let zcr = zero_crossing_rate(&clip, cfg.win_ms, cfg.hop_ms);
    let centroid = spectral_centroid(&spec);

    let mut out = [0.0; FEATURE_DIM];
    out[CHROMA_RANGE].copy_from_slice(&chroma.row_means());
    out[MEL_RANGE].copy_from_slice(&mel.row_means());
    out[MFCC_RANGE].copy_from_slice(&mfccs.row_means());
    out[ZCR_INDEX] = mean(&zcr);
    out[CENTROID_INDEX] = mean(&centroid);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AudioError::Parameter("non-finite feature value".into()));
    }
    Ok(FeatureVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn layout_sums_to_94() {
        assert_eq!(FEATURE_DIM, 94);
        assert_eq!(CHROMA_RANGE.len() + MEL_RANGE.len() + MFCC_RANGE.len() + 2, 94);
    }

    #[test]
    fn zero_clip_features_are_finite_and_degenerate() {
        let z = AudioClip::new(vec![0.0; 16000], 16000, "z").unwrap();
        let v = extract_feature_vector(&z, &FeatureConfig::default()).unwrap();
        assert!(v.chroma().iter().all(|&x| x == 0.0));
        assert!(v.mel().iter().all(|&x| x == 0.0));
        assert!(v.mfcc().iter().all(|x| x.is_finite()));
        assert!((v.mfcc()[0] - 60f64.sqrt() * LOG_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(v.zcr(), 0.0);
        assert_eq!(v.centroid(), 0.0);
    }

    #[test]
    fn deterministic_and_gain_invariant() {
        let s: Vec<f64> = (0..12000)
            .map(|i| 0.4 * (2.0 * PI * 220.0 * i as f64 / 16000.0).sin() + 0.1 * ((i * 31 % 17) as f64 / 17.0 - 0.5))
            .collect();
        let clip = AudioClip::new(s, 16000, "x").unwrap();
        let cfg = FeatureConfig::default();
        let a = extract_feature_vector(&clip, &cfg).unwrap();
        let b = extract_feature_vector(&clip, &cfg).unwrap();
        assert_eq!(a, b);
        let n = extract_feature_vector(&normalize_amplitude(&clip), &cfg).unwrap();
        assert_eq!(a, n);
    }

    #[test]
    fn empty_clip_errors() {
        let e = AudioClip::new(vec![], 16000, "e").unwrap();
        assert!(matches!(
            extract_feature_vector(&e, &FeatureConfig::default()),
            Err(AudioError::EmptyAudio)
        ));
    }

    #[test]
    fn serde_checks_length() {
        assert!(serde_json::from_str::<FeatureVector>("[1.0, 2.0]").is_err());
        let v = FeatureVector::new([0.5; FEATURE_DIM]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<FeatureVector>(&s).unwrap(), v);
    }
}
