//! Speech-emotion-recognition building blocks.
//!
//! The crate covers everything that happens before a classifier sees data:
//!
//! - [`audio_io`]: WAV decode/encode, resampling, peak normalization
//! - [`preprocess`]: noise reduction, silence trimming, short-clip filtering, 1-s blocking
//! - [`augment`]: stretch, pitch shift, gain, background noise, class-balancing plans
//! - [`features`]: STFT, mel, MFCC, chroma, ZCR, centroid, the 94-dim vector, scaling, spectrogram images
//! - [`corpus`]: manifests, label mapping, stratified splits, count tables
//! - [`metrics`]: confusion matrices, WA/UA reports

pub mod audio_io;
pub mod augment;
pub mod corpus;
pub mod features;
pub mod metrics;
pub mod preprocess;
mod spectral;

pub use audio_io::{AudioClip, AudioError};
pub use corpus::{Dataset, Emotion, Split, UtteranceRecord};
pub use features::{FeatureVector, ScalerParams, SpectrogramMatrix, FEATURE_DIM};
pub use metrics::{ConfusionMatrix, EvalReport};

/// Deterministic 64-bit mixing of a seed with a string key.
///
/// Used wherever per-item randomness must not depend on iteration order
/// (parallel plan execution, per-tree forest seeds).
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, then splitmix64 finalization with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pairwise (cascade) summation; fixed order, so results are reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
