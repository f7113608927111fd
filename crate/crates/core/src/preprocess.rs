//! Clip-level cleanup applied before feature extraction: spectral-gating
//! noise reduction, silence trimming, short-clip filtering and 1-s blocking.

use serde::{Deserialize, Serialize};

use crate::audio_io::{self, normalize_amplitude, AudioClip, AudioError};
use crate::spectral::{Padding, StftPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_rate: u32,
    /// Frame RMS threshold relative to the loudest frame, in dB.
    pub silence_threshold_db: f64,
    pub silence_frame_ms: f64,
    pub min_duration_s: f64,
    /// Fraction of lowest-energy frames used for the noise-floor estimate.
    pub noise_quantile: f64,
    pub oversubtraction: f64,
    pub spectral_floor: f64,
    /// Minimum level gap, in dB, between the median frame and the quiet
    /// frames for the quiet frames to count as a noise estimate. Clips
    /// without such a gap are returned unchanged.
    pub min_noise_contrast_db: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_rate: 16000,
            silence_threshold_db: -40.0,
            silence_frame_ms: 20.0,
            min_duration_s: 1.0,
            noise_quantile: 0.10,
            oversubtraction: 1.5,
            spectral_floor: 0.05,
            min_noise_contrast_db: 6.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::Parameter(m.to_string()));
        if self.target_rate == 0 {
            return bad("target_rate must be positive");
        }
        if !(self.noise_quantile > 0.0 && self.noise_quantile < 1.0) {
            return bad("noise_quantile must lie in (0, 1)");
        }
        if !(self.oversubtraction >= 1.0) {
            return bad("oversubtraction must be >= 1");
        }
        if !(0.0..1.0).contains(&self.spectral_floor) {
            return bad("spectral_floor must lie in [0, 1)");
        }
        if !(self.min_noise_contrast_db >= 0.0) {
            return bad("min_noise_contrast_db must be non-negative");
        }
        if !(self.min_duration_s > 0.0) {
            return bad("min_duration_s must be positive");
        }
        if !(self.silence_frame_ms > 0.0) || !self.silence_threshold_db.is_finite() {
            return bad("silence frame length must be positive and threshold finite");
        }
        Ok(())
    }

    fn frame_len(&self, rate: u32) -> usize {
        ((self.silence_frame_ms * f64::from(rate) / 1000.0).round() as usize).max(1)
    }
}

const NR_NFFT: usize = 512;
const NR_HOP: usize = 128;

/// Per-bin gains `max(|X| - a*floor, b*|X|) / |X|`; never above 1. `None`
/// when the quietest frames are not clearly below the median frame.
fn gate_gains(mags: &[Vec<f64>], cfg: &PreprocessConfig) -> Option<Vec<Vec<f64>>> {
    let n_frames = mags.len();
    let n_bins = mags[0].len();

    let mut order: Vec<usize> = (0..n_frames).collect();
    let energy: Vec<f64> = mags.iter().map(|f| f.iter().map(|m| m * m).sum()).collect();
    order.sort_by(|&a, &b| energy[a].total_cmp(&energy[b]).then(a.cmp(&b)));
    let n_quiet = ((cfg.noise_quantile * n_frames as f64).ceil() as usize).clamp(1, n_frames);
    let quiet_energy = order[..n_quiet].iter().map(|&f| energy[f]).sum::<f64>() / n_quiet as f64;
    let median_energy = energy[order[n_frames / 2]];
    if median_energy <= 0.0 || quiet_energy * 10f64.powf(cfg.min_noise_contrast_db / 10.0) > median_energy {
        return None;
    }

    let mut floor = vec![0.0; n_bins];
    for &f in &order[..n_quiet] {
        for (acc, m) in floor.iter_mut().zip(&mags[f]) {
            *acc += m;
        }
    }
    for v in floor.iter_mut() {
        *v /= n_quiet as f64;
    }

    let gains = mags
        .iter()
        .map(|frame| {
            frame
                .iter()
                .zip(&floor)
                .map(|(&m, &nf)| {
                    if m <= 0.0 {
                        return 1.0;
                    }
                    let reduced = (m - cfg.oversubtraction * nf).max(cfg.spectral_floor * m);
                    (reduced / m).min(1.0)
                })
                .collect()
        })
        .collect();
    Some(gains)
}

/// Spectral gating with a stationary noise floor taken from the quietest
/// frames. Phase is kept; length is preserved exactly.
pub fn reduce_noise(clip: &AudioClip, cfg: &PreprocessConfig) -> AudioClip {
    if clip.len() < NR_NFFT {
        return clip.clone();
    }
    let plan = StftPlan::new(NR_NFFT, NR_HOP, NR_NFFT);
    let mut frames = plan.forward(clip.samples(), Padding::Reflect);
    let mags: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|c| c.norm()).collect()).collect();
    let Some(gains) = gate_gains(&mags, cfg) else {
        return clip.clone();
    };
    for (frame, g) in frames.iter_mut().zip(&gains) {
        for (c, &gain) in frame.iter_mut().zip(g) {
            *c *= gain;
        }
    }
    let mut out = plan.inverse(&frames, clip.len());
    for s in out.iter_mut() {
        if !s.is_finite() {
            *s = 0.0;
        }
    }
    clip.with_samples(out)
}

fn rms(frame: &[f64]) -> f64 {
    (frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64).sqrt()
}

/// Drops frames whose RMS sits more than `silence_threshold_db` below the
/// loudest frame. The result may be empty.
pub fn trim_silence(clip: &AudioClip, cfg: &PreprocessConfig) -> AudioClip {
    if clip.is_empty() {
        return clip.clone();
    }
    let frame_len = cfg.frame_len(clip.sample_rate());
    let levels: Vec<f64> = clip.samples().chunks(frame_len).map(rms).collect();
    let peak = levels.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return clip.with_samples(Vec::new());
    }
    let threshold = peak * 10f64.powf(cfg.silence_threshold_db / 20.0);
    let kept: Vec<f64> = clip
        .samples()
        .chunks(frame_len)
        .zip(&levels)
        .filter(|(_, &l)| l >= threshold)
        .flat_map(|(c, _)| c.iter().copied())
        .collect();
    clip.with_samples(kept)
}

fn long_enough(clip: &AudioClip, min_duration_s: f64) -> bool {
    let needed = (min_duration_s * f64::from(clip.sample_rate()) - 1e-9).ceil();
    clip.len() as f64 >= needed
}

/// Removes clips shorter than `min_duration_s`; exactly the minimum is kept.
pub fn filter_short(
    records: Vec<(String, AudioClip)>,
    cfg: &PreprocessConfig,
) -> Vec<(String, AudioClip)> {
    records
        .into_iter()
        .filter(|(_, c)| long_enough(c, cfg.min_duration_s))
        .collect()
}

/// Splits a clip into 1-second blocks with stride `1000 - overlap_ms`
/// milliseconds, dropping the trailing partial block. Each block is
/// peak-normalized.
pub fn block_1s(clip: &AudioClip, overlap_ms: f64) -> Result<Vec<AudioClip>, AudioError> {
    if !(0.0..1000.0).contains(&overlap_ms) {
        return Err(AudioError::Parameter(format!(
            "overlap_ms must lie in [0, 1000), got {overlap_ms}"
        )));
    }
    let block = clip.sample_rate() as usize;
    if clip.len() < block {
        return Err(AudioError::Precondition(format!(
            "clip lasts {:.3} s, blocking needs at least 1 s",
            clip.duration_secs()
        )));
    }
    let stride = (((1000.0 - overlap_ms) * f64::from(clip.sample_rate()) / 1000.0).round() as usize).max(1);
    let n_blocks = (clip.len() - block) / stride + 1;
    Ok((0..n_blocks)
        .map(|b| {
            let start = b * stride;
            let piece = clip.with_samples(clip.samples()[start..start + block].to_vec());
            normalize_amplitude(&piece)
        })
        .collect())
}

/// The inference/featurization chain: resample, normalize, denoise, trim
/// silence, renormalize.
pub fn prepare_clip(clip: &AudioClip, cfg: &PreprocessConfig) -> Result<AudioClip, AudioError> {
    let clip = audio_io::resample(clip, cfg.target_rate)?;
    let clip = normalize_amplitude(&clip);
    let clip = reduce_noise(&clip, cfg);
    let clip = trim_silence(&clip, cfg);
    Ok(normalize_amplitude(&clip))
}

/// Whether a prepared clip satisfies the minimum-duration rule.
pub fn meets_min_duration(clip: &AudioClip, cfg: &PreprocessConfig) -> bool {
    long_enough(clip, cfg.min_duration_s)
}
