//! WAV decoding/encoding, sample-rate conversion and peak normalization.
//!
//! Clips are mono `f64` sequences. Integer PCM is scaled by `2^(bits-1)`,
//! stereo is mixed down by the channel mean.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("malformed WAV container: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("sample {index} = {value} lies outside [-1, 1]; normalize before encoding")]
    Range { index: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// A mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: String,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        source_id: impl Into<String>,
    ) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::Parameter(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    /// Builds a clip from samples already known to be finite.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: u32, source_id: &str) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
            source_id: source_id.to_string(),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Same clip metadata with new samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self::from_parts(samples, self.sample_rate, &self.source_id)
    }
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::Format(format!(
            "fmt chunk is {} bytes, need at least 16",
            body.len()
        )));
    }
    let mut format = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let bits = read_u16(body, 14);
    if format == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the subformat GUID,
        // whose first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(AudioError::Format("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        format = read_u16(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits,
    })
}

/// Decodes a RIFF/WAVE byte buffer into a mono clip.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Format("missing RIFF/WAVE signature".into()));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        // Streams sometimes carry a placeholder size; use what is present.
        let end = start.saturating_add(size).min(bytes.len());
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[start..end])?),
            b"data" => {
                data = Some(&bytes[start..end]);
                if fmt.is_some() {
                    break;
                }
            }
            _ => {}
        }
        pos = start.saturating_add(size).saturating_add(size & 1);
    }

    let fmt = fmt.ok_or_else(|| AudioError::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Format("no data chunk".into()))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels (only mono and stereo are supported)",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(AudioError::Format("sample rate is zero".into()));
    }
    let bytes_per_sample = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_PCM, 32) => 4,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (f, b) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {f:#06x} with {b} bits per sample"
            )))
        }
    };
    let channels = usize::from(fmt.channels);
    let frame_bytes = bytes_per_sample * channels;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(AudioError::EmptyAudio);
    }

    let decode_one = |b: &[u8]| -> f64 {
        match (fmt.format, bytes_per_sample) {
            (FORMAT_PCM, 2) => f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0,
            (FORMAT_PCM, 3) => {
                let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                f64::from(v) / 8_388_608.0
            }
            (FORMAT_PCM, 4) => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])) / 2_147_483_648.0,
            _ => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        }
    };

    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(frame_bytes).take(n_frames) {
        let s = if channels == 1 {
            decode_one(frame)
        } else {
            0.5 * (decode_one(&frame[..bytes_per_sample]) + decode_one(&frame[bytes_per_sample..]))
        };
        if !s.is_finite() {
            return Err(AudioError::Format("non-finite float sample".into()));
        }
        samples.push(s);
    }
    Ok(AudioClip::from_parts(samples, fmt.sample_rate, ""))
}

/// Encodes a clip as 16-bit PCM mono WAV.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if let Some((index, &value)) = clip
        .samples
        .iter()
        .enumerate()
        .find(|(_, s)| !(-1.0..=1.0).contains(*s))
    {
        return Err(AudioError::Range { index, value });
    }
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok(out)
}

/// Divides every sample by the clip's peak. All-zero clips pass through.
pub fn normalize_amplitude(clip: &AudioClip) -> AudioClip {
    let peak = clip.peak();
    if peak == 0.0 {
        return clip.clone();
    }
    clip.with_samples(clip.samples.iter().map(|s| s / peak).collect())
}

const KAISER_BETA: f64 = 8.6;
const TAPS: usize = 64;
const HALF_TAPS: i64 = (TAPS / 2) as i64;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.94;
const MAX_TABLE_PHASES: u64 = 4096;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc interpolation kernel with a fractional input offset.
struct SincKernel {
    cutoff: f64,
    i0_beta: f64,
}

impl SincKernel {
    fn new(ratio: f64) -> Self {
        Self {
            cutoff: 0.5 * ratio.min(1.0) * ROLLOFF,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    /// Taps for input samples `base - 31 ..= base + 32` when the output
    /// instant sits `frac` samples after `base`. Normalized to unit DC gain.
    fn taps(&self, frac: f64) -> [f64; TAPS] {
        let mut taps = [0.0; TAPS];
        let half_width = HALF_TAPS as f64;
        let mut sum = 0.0;
        for (j, tap) in taps.iter_mut().enumerate() {
            let offset = (j as i64 - (HALF_TAPS - 1)) as f64 - frac;
            let r = offset / half_width;
            let w = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta
            };
            *tap = 2.0 * self.cutoff * sinc(2.0 * self.cutoff * offset) * w;
            sum += *tap;
        }
        if sum.abs() > 1e-12 {
            for t in taps.iter_mut() {
                *t /= sum;
            }
        }
        taps
    }
}

fn convolve_at(samples: &[f64], base: i64, taps: &[f64; TAPS]) -> f64 {
    let n = samples.len() as i64;
    let first = base - (HALF_TAPS - 1);
    let mut acc = 0.0;
    for (j, t) in taps.iter().enumerate() {
        let idx = first + j as i64;
        if idx >= 0 && idx < n {
            acc += samples[idx as usize] * t;
        }
    }
    acc
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Resamples by an arbitrary positive ratio (`output_rate / input_rate`),
/// producing exactly `out_len` samples.
pub(crate) fn resample_by_ratio(samples: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    let kernel = SincKernel::new(ratio);
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let base = t.floor();
            kernel_eval(samples, &kernel, base as i64, t - base)
        })
        .collect()
}

fn kernel_eval(samples: &[f64], kernel: &SincKernel, base: i64, frac: f64) -> f64 {
    convolve_at(samples, base, &kernel.taps(frac))
}

/// Polyphase windowed-sinc conversion to `target_rate`.
///
/// Output length is `round(len * target / source)`. Equal rates return the
/// input unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::Parameter("target rate must be positive".into()));
    }
    let source_rate = clip.sample_rate;
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let out_len = ((clip.len() as u128 * u128::from(target_rate) * 2 + u128::from(source_rate))
        / (2 * u128::from(source_rate))) as usize;

    let g = gcd(u64::from(source_rate), u64::from(target_rate));
    let up = u64::from(target_rate) / g;
    let down = u64::from(source_rate) / g;
    let ratio = f64::from(target_rate) / f64::from(source_rate);

    let samples = if up <= MAX_TABLE_PHASES {
        // Output n sits at input position n*down/up: integer part and one of
        // `up` fractional phases.
        let kernel = SincKernel::new(ratio);
        let table: Vec<[f64; TAPS]> = (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect();
        (0..out_len as u64)
            .map(|n| {
                let pos = n * down;
                let base = (pos / up) as i64;
                let phase = (pos % up) as usize;
                convolve_at(&clip.samples, base, &table[phase])
            })
            .collect()
    } else {
        resample_by_ratio(&clip.samples, ratio, out_len)
    };
    Ok(AudioClip::from_parts(samples, target_rate, &clip.source_id))
}
