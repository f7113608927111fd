//! Waveform augmentation (phase-vocoder stretch, pitch shift, gain,
//! background noise) and the planner that uses them to balance classes.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::{normalize_amplitude, resample_by_ratio, AudioClip, AudioError};
use crate::corpus::Emotion;
use crate::derive_seed;
use crate::spectral::{Padding, StftPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("invalid augmentation parameter: {0}")]
    Parameter(String),
    #[error("noise clip '{0}' is silent")]
    DegenerateNoise(String),
    #[error("source utterance '{0}' could not be resolved")]
    MissingSource(String),
    #[error("noise clip '{0}' could not be resolved")]
    MissingNoise(String),
    #[error("duplicate plan entry for source '{0}'")]
    Duplicate(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub const STRETCH_MIN: f64 = 0.5;
pub const STRETCH_MAX: f64 = 2.0;
pub const MAX_SEMITONES: f64 = 12.0;

const PV_WIN: usize = 1024;
const PV_HOP: usize = 256;

fn wrap_phase(x: f64) -> f64 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

/// Phase-vocoder time scaling to exactly `out_len` samples.
fn phase_vocoder(samples: &[f64], rate: f64, out_len: usize) -> Vec<f64> {
    if samples.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let plan = StftPlan::new(PV_WIN, PV_HOP, PV_WIN);
    let mut frames = plan.forward(samples, Padding::Zero);
    let n_frames = frames.len();
    let n_bins = plan.n_bins();
    frames.push(vec![Complex64::new(0.0, 0.0); n_bins]);

    let advance: Vec<f64> = (0..n_bins)
        .map(|k| 2.0 * PI * k as f64 * PV_HOP as f64 / PV_WIN as f64)
        .collect();
    let mut phase: Vec<f64> = frames[0].iter().map(|c| c.arg()).collect();
    let mut out_frames = Vec::new();
    let mut t = 0.0;
    while t < n_frames as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let (a, b) = (&frames[i], &frames[i + 1]);
        let frame: Vec<Complex64> = (0..n_bins)
            .map(|k| {
                let mag = (1.0 - alpha) * a[k].norm() + alpha * b[k].norm();
                Complex64::from_polar(mag, phase[k])
            })
            .collect();
        out_frames.push(frame);
        for k in 0..n_bins {
            let dphi = wrap_phase(b[k].arg() - a[k].arg() - advance[k]);
            phase[k] += advance[k] + dphi;
        }
        t += rate;
    }
    plan.inverse(&out_frames, out_len)
}

/// Changes duration by `1 / rate` while keeping pitch.
pub fn time_stretch(clip: &AudioClip, rate: f64) -> Result<AudioClip, AugmentError> {
    if !(STRETCH_MIN..=STRETCH_MAX).contains(&rate) {
        return Err(AugmentError::Parameter(format!(
            "stretch rate {rate} outside [{STRETCH_MIN}, {STRETCH_MAX}]"
        )));
    }
    let out_len = (clip.len() as f64 / rate).round() as usize;
    Ok(clip.with_samples(phase_vocoder(clip.samples(), rate, out_len)))
}

/// Shifts pitch by `semitones` with the duration unchanged: stretch to
/// `2^(s/12)` times the length, then resample back to the input length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip, AugmentError> {
    if !(semitones.is_finite() && semitones.abs() <= MAX_SEMITONES) {
        return Err(AugmentError::Parameter(format!(
            "pitch shift of {semitones} semitones exceeds ±{MAX_SEMITONES}"
        )));
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched_len = (clip.len() as f64 * factor).round() as usize;
    let stretched = phase_vocoder(clip.samples(), 1.0 / factor, stretched_len);
    let ratio = clip.len() as f64 / stretched_len.max(1) as f64;
    Ok(clip.with_samples(resample_by_ratio(&stretched, ratio, clip.len())))
}

/// Multiplies every sample by `10^(gain_db / 20)`. No clipping.
pub fn apply_gain(clip: &AudioClip, gain_db: f64) -> Result<AudioClip, AugmentError> {
    if !gain_db.is_finite() {
        return Err(AugmentError::Parameter(format!("gain {gain_db} dB is not finite")));
    }
    let g = 10f64.powf(gain_db / 20.0);
    Ok(clip.with_samples(clip.samples().iter().map(|s| s * g).collect()))
}

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// The noise actually added by [`mix_noise`]: looped from a seeded offset to
/// the clip length and scaled to the requested SNR (before renormalization).
pub fn noise_component(clip: &AudioClip, noise: &AudioClip, snr_db: f64, seed: u64) -> Result<Vec<f64>, AugmentError> {
    if clip.sample_rate() != noise.sample_rate() {
        return Err(AugmentError::Parameter(format!(
            "noise at {} Hz cannot be mixed into a clip at {} Hz",
            noise.sample_rate(),
            clip.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(AugmentError::Parameter(format!("SNR {snr_db} dB is not finite")));
    }
    if noise.is_empty() || noise.peak() == 0.0 {
        return Err(AugmentError::DegenerateNoise(noise.source_id().to_string()));
    }
    let n = noise.len();
    let offset = (ChaCha8Rng::seed_from_u64(seed).random::<u64>() % n as u64) as usize;
    let looped: Vec<f64> = (0..clip.len()).map(|i| noise.samples()[(offset + i) % n]).collect();
    let p_noise = mean_power(&looped);
    if p_noise == 0.0 {
        return Err(AugmentError::DegenerateNoise(noise.source_id().to_string()));
    }
    let p_signal = mean_power(clip.samples());
    let scale = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(looped.into_iter().map(|v| v * scale).collect())
}

/// Adds background noise at `snr_db` (mean-power ratio over the whole clip)
/// and renormalizes the mixture to peak 1.
pub fn mix_noise(clip: &AudioClip, noise: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip, AugmentError> {
    let added = noise_component(clip, noise, snr_db, seed)?;
    let mixed: Vec<f64> = clip.samples().iter().zip(&added).map(|(s, n)| s + n).collect();
    Ok(normalize_amplitude(&clip.with_samples(mixed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Stretch,
    PitchShift,
    Gain,
    NoiseMix,
}

impl AugmentKind {
    pub const CYCLE: [AugmentKind; 4] = [
        AugmentKind::Stretch,
        AugmentKind::PitchShift,
        AugmentKind::Gain,
        AugmentKind::NoiseMix,
    ];

    fn short(self) -> &'static str {
        match self {
            AugmentKind::Stretch => "str",
            AugmentKind::PitchShift => "pit",
            AugmentKind::Gain => "gain",
            AugmentKind::NoiseMix => "noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentOp {
    Stretch { rate: f64 },
    PitchShift { semitones: f64 },
    Gain { gain_db: f64 },
    NoiseMix { snr_db: f64, noise_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(flatten)]
    pub op: AugmentOp,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn kind(&self) -> AugmentKind {
        match self.op {
            AugmentOp::Stretch { .. } => AugmentKind::Stretch,
            AugmentOp::PitchShift { .. } => AugmentKind::PitchShift,
            AugmentOp::Gain { .. } => AugmentKind::Gain,
            AugmentOp::NoiseMix { .. } => AugmentKind::NoiseMix,
        }
    }

    /// Id of the clip produced by applying this spec to `source_id`.
    pub fn derived_id(&self, source_id: &str) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(format!("{source_id}\n{canonical}").as_bytes());
        let hex: String = digest[..5].iter().map(|b| format!("{b:02x}")).collect();
        format!("{source_id}~{}-{hex}", self.kind().short())
    }
}

/// Applies one augmentation. `noise` is required for noise mixing.
pub fn apply_spec(clip: &AudioClip, spec: &AugmentSpec, noise: Option<&AudioClip>) -> Result<AudioClip, AugmentError> {
    match &spec.op {
        AugmentOp::Stretch { rate } => time_stretch(clip, *rate),
        AugmentOp::PitchShift { semitones } => pitch_shift(clip, *semitones),
        AugmentOp::Gain { gain_db } => apply_gain(clip, *gain_db),
        AugmentOp::NoiseMix { snr_db, noise_id } => {
            let noise = noise.ok_or_else(|| AugmentError::MissingNoise(noise_id.clone()))?;
            mix_noise(clip, noise, *snr_db, spec.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub stretch_range: [f64; 2],
    pub pitch_range: [f64; 2],
    pub gain_db_range: [f64; 2],
    pub snr_db_range: [f64; 2],
    /// Upper bound on augmented copies per source utterance; `None` lifts it.
    pub max_copies_per_source: Option<usize>,
    /// Kinds in use, cycled in this order.
    pub kinds: Vec<AugmentKind>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            stretch_range: [0.8, 1.2],
            pitch_range: [-2.0, 2.0],
            gain_db_range: [-6.0, 6.0],
            snr_db_range: [10.0, 20.0],
            max_copies_per_source: Some(3),
            kinds: AugmentKind::CYCLE.to_vec(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let check = |name: &str, r: [f64; 2], lo: f64, hi: f64| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
                Err(AugmentError::Parameter(format!(
                    "{name} [{}, {}] must be ordered and within [{lo}, {hi}]",
                    r[0], r[1]
                )))
            } else {
                Ok(())
            }
        };
        check("stretch_range", self.stretch_range, STRETCH_MIN, STRETCH_MAX)?;
        check("pitch_range", self.pitch_range, -MAX_SEMITONES, MAX_SEMITONES)?;
        check("gain_db_range", self.gain_db_range, f64::MIN, f64::MAX)?;
        check("snr_db_range", self.snr_db_range, f64::MIN, f64::MAX)?;
        if self.kinds.is_empty() {
            return Err(AugmentError::Parameter("at least one augmentation kind is required".into()));
        }
        if self.max_copies_per_source == Some(0) {
            return Err(AugmentError::Parameter("max_copies_per_source must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source_id: String,
    pub emotion: Emotion,
    pub spec: AugmentSpec,
    pub new_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub emotion: Emotion,
    pub reached: usize,
    pub target: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub seed: u64,
    pub targets: BTreeMap<Emotion, usize>,
    pub entries: Vec<PlanEntry>,
    /// Classes the plan cannot bring up to target.
    pub shortfalls: Vec<Shortfall>,
}

pub fn uniform_targets(target: usize) -> BTreeMap<Emotion, usize> {
    Emotion::ALL.iter().map(|&e| (e, target)).collect()
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    let v = if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    };
    // four decimals keep plan files readable and ids stable
    (v * 1e4).round() / 1e4
}

/// Plans augmentations raising each class to its target.
///
/// `sources` lists the train-pool utterance ids per class. Entry `j` of a
/// class uses source `j mod n`; its copy index is `j / n`; kinds cycle in
/// configuration order offset by the copy index. Parameters come from a
/// per-class seeded generator.
pub fn plan_balance(
    sources: &BTreeMap<Emotion, Vec<String>>,
    targets: &BTreeMap<Emotion, usize>,
    cfg: &AugmentConfig,
    noise_ids: &[String],
    seed: u64,
) -> Result<BalancePlan, AugmentError> {
    cfg.validate()?;
    let kinds: Vec<AugmentKind> = cfg
        .kinds
        .iter()
        .copied()
        .filter(|k| *k != AugmentKind::NoiseMix || !noise_ids.is_empty())
        .collect();
    if kinds.is_empty() {
        return Err(AugmentError::Parameter("noise mixing is the only kind but no noise clips were given".into()));
    }
    let mut noise_ids = noise_ids.to_vec();
    noise_ids.sort();

    let mut entries = Vec::new();
    let mut shortfalls = Vec::new();
    let mut seen = BTreeSet::new();
    for (&emotion, &target) in targets {
        let mut srcs = sources.get(&emotion).cloned().unwrap_or_default();
        srcs.sort();
        srcs.dedup();
        let have = srcs.len();
        if have >= target {
            continue;
        }
        let deficit = target - have;
        if have == 0 {
            shortfalls.push(Shortfall {
                emotion,
                reached: 0,
                target,
                reason: "no source utterances".into(),
            });
            continue;
        }
        let capacity = cfg.max_copies_per_source.map_or(usize::MAX, |c| c.saturating_mul(have));
        let n_new = deficit.min(capacity);
        if n_new < deficit {
            shortfalls.push(Shortfall {
                emotion,
                reached: have + n_new,
                target,
                reason: format!(
                    "{have} sources × {} copies cap",
                    cfg.max_copies_per_source.unwrap_or(usize::MAX)
                ),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, emotion.name()));
        for j in 0..n_new {
            let s = j % have;
            let copy = j / have;
            let source_id = &srcs[s];
            let kind = kinds[(s + copy) % kinds.len()];
            let op = match kind {
                AugmentKind::Stretch => AugmentOp::Stretch {
                    rate: draw(&mut rng, cfg.stretch_range),
                },
                AugmentKind::PitchShift => AugmentOp::PitchShift {
                    semitones: draw(&mut rng, cfg.pitch_range),
                },
                AugmentKind::Gain => AugmentOp::Gain {
                    gain_db: draw(&mut rng, cfg.gain_db_range),
                },
                AugmentKind::NoiseMix => AugmentOp::NoiseMix {
                    snr_db: draw(&mut rng, cfg.snr_db_range),
                    noise_id: noise_ids[rng.random_range(0..noise_ids.len())].clone(),
                },
            };
            let spec = AugmentSpec {
                op,
                seed: derive_seed(seed, &format!("{source_id}/{copy}")),
            };
            let key = (source_id.clone(), serde_json::to_string(&spec).expect("spec serializes"));
            if !seen.insert(key) {
                return Err(AugmentError::Duplicate(source_id.clone()));
            }
            entries.push(PlanEntry {
                source_id: source_id.clone(),
                emotion,
                new_id: spec.derived_id(source_id),
                spec,
            });
        }
    }
    Ok(BalancePlan {
        seed,
        targets: targets.clone(),
        entries,
        shortfalls,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedClip {
    pub new_id: String,
    pub source_id: String,
    pub emotion: Emotion,
    pub clip: AudioClip,
}

/// Runs every plan entry (in parallel; output in plan order). Outputs are
/// peak-normalized.
pub fn execute_plan<S, N>(plan: &BalancePlan, fetch_source: S, fetch_noise: N) -> Result<Vec<AugmentedClip>, AugmentError>
where
    S: Fn(&str) -> Option<AudioClip> + Sync,
    N: Fn(&str) -> Option<AudioClip> + Sync,
{
    plan.entries
        .par_iter()
        .map(|e| {
            let clip = fetch_source(&e.source_id).ok_or_else(|| AugmentError::MissingSource(e.source_id.clone()))?;
            let noise = match &e.spec.op {
                AugmentOp::NoiseMix { noise_id, .. } => {
                    Some(fetch_noise(noise_id).ok_or_else(|| AugmentError::MissingNoise(noise_id.clone()))?)
                }
                _ => None,
            };
            let out = apply_spec(&clip, &e.spec, noise.as_ref())?;
            Ok(AugmentedClip {
                new_id: e.new_id.clone(),
                source_id: e.source_id.clone(),
                emotion: e.emotion,
                clip: normalize_amplitude(&out).with_source_id(e.new_id.clone()),
            })
        })
        .collect()
}
