//! Time-frequency analysis: magnitude STFT, mel filterbank, MFCC, chroma,
//! zero-crossing rate and spectral centroid.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio_io::{AudioClip, AudioError};
use crate::spectral::{Padding, StftPlan};

/// Row-major `n_rows × n_cols` matrix; columns are analysis frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n_cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, col)).collect()
    }

    fn set_column(&mut self, col: usize, values: &[f64]) {
        for (r, v) in values.iter().enumerate() {
            self.set(r, col, *v);
        }
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| {
                if self.n_cols == 0 {
                    0.0
                } else {
                    self.row(r).iter().sum::<f64>() / self.n_cols as f64
                }
            })
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Magnitude STFT, `nfft/2 + 1` bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramMatrix {
    pub magnitudes: Grid,
    pub sample_rate: u32,
    pub win_samples: usize,
    pub hop_samples: usize,
    pub nfft: usize,
    pub centered: bool,
}

impl SpectrogramMatrix {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.n_rows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.n_cols()
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * f64::from(self.sample_rate) / self.nfft as f64
    }
}

pub(crate) fn ms_to_samples(ms: f64, rate: u32) -> usize {
    ((ms * f64::from(rate) / 1000.0).round() as usize).max(1)
}

/// Hann-windowed magnitude STFT. Centered mode reflect-pads by `win/2`, giving
/// `floor(n / hop) + 1` frames.
pub fn stft(
    clip: &AudioClip,
    win_ms: f64,
    hop_ms: f64,
    nfft: usize,
    centered: bool,
) -> Result<SpectrogramMatrix, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let rate = clip.sample_rate();
    let win = ms_to_samples(win_ms, rate);
    let hop = ms_to_samples(hop_ms, rate);
    if win > nfft {
        return Err(AudioError::Parameter(format!(
            "window of {win} samples exceeds nfft {nfft}"
        )));
    }
    let plan = StftPlan::new(win, hop, nfft);
    let padding = if centered { Padding::Reflect } else { Padding::None };
    let frames = plan.forward(clip.samples(), padding);
    let mut magnitudes = Grid::zeros(plan.n_bins(), frames.len());
    for (f, spec) in frames.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            magnitudes.set(k, f, c.norm());
        }
    }
    Ok(SpectrogramMatrix {
        magnitudes,
        sample_rate: rate,
        win_samples: win,
        hop_samples: hop,
        nfft,
        centered,
    })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Unit-peak triangular filters, `n_mels × (nfft/2 + 1)`, centers uniformly
/// spaced on the HTK mel scale between 0 Hz and Nyquist.
pub fn mel_filterbank(n_mels: usize, nfft: usize, sample_rate: u32) -> Grid {
    let n_bins = nfft / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bank = Grid::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * f64::from(sample_rate) / nfft as f64;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            bank.set(m, k, w);
        }
    }
    bank
}

/// Mel-band energies: filterbank applied to the power spectrum.
pub fn mel_spectrogram(spec: &SpectrogramMatrix, n_mels: usize) -> Grid {
    let bank = mel_filterbank(n_mels, spec.nfft, spec.sample_rate);
    let n_frames = spec.n_frames();
    let mut out = Grid::zeros(n_mels, n_frames);
    for m in 0..n_mels {
        let weights = bank.row(m);
        let support: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
        for f in 0..n_frames {
            let e: f64 = support
                .iter()
                .map(|&k| {
                    let mag = spec.magnitudes.get(k, f);
                    weights[k] * mag * mag
                })
                .sum();
            out.set(m, f, e);
        }
    }
    out
}

/// Orthonormal DCT-II computed through a same-length complex FFT
/// (even/odd reordering).
pub(crate) struct Dct2 {
    n: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    twiddles: Vec<Complex64>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        let twiddles = (0..n)
            .map(|k| Complex64::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2.0 * n as f64)))
            .collect();
        Self { n, fft, twiddles }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(x.len(), n);
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n.div_ceil(2) {
            v[i] = Complex64::new(x[2 * i], 0.0);
        }
        for i in 0..n / 2 {
            v[n - 1 - i] = Complex64::new(x[2 * i + 1], 0.0);
        }
        self.fft.process(&mut v);
        let s0 = (1.0 / n as f64).sqrt();
        let sk = (2.0 / n as f64).sqrt();
        (0..n)
            .map(|k| {
                let y = (v[k] * self.twiddles[k]).re;
                y * if k == 0 { s0 } else { sk }
            })
            .collect()
    }
}

pub const LOG_FLOOR: f64 = 1e-10;

/// MFCCs: orthonormal DCT-II of `ln(mel + 1e-10)`, first `n_mfcc` kept.
pub fn mfcc(mel: &Grid, n_mfcc: usize) -> Grid {
    let n_mels = mel.n_rows();
    assert!(n_mfcc <= n_mels, "cannot keep {n_mfcc} coefficients from {n_mels} bands");
    let dct = Dct2::new(n_mels);
    let mut out = Grid::zeros(n_mfcc, mel.n_cols());
    for f in 0..mel.n_cols() {
        let logs: Vec<f64> = mel.column(f).iter().map(|e| (e + LOG_FLOOR).ln()).collect();
        let coeffs = dct.transform(&logs);
        out.set_column(f, &coeffs[..n_mfcc]);
    }
    out
}

pub const CHROMA_MIN_HZ: f64 = 27.5;

/// Pitch class (0 = C, 9 = A) of a frequency.
pub fn pitch_class(freq: f64) -> usize {
    let midi = (69.0 + 12.0 * (freq / 440.0).log2()).round() as i64;
    midi.rem_euclid(12) as usize
}

/// 12-bin chromagram; each frame divided by its maximum.
pub fn chroma(spec: &SpectrogramMatrix) -> Grid {
    let classes: Vec<Option<usize>> = (0..spec.n_bins())
        .map(|k| {
            let f = spec.bin_frequency(k);
            (f >= CHROMA_MIN_HZ).then(|| pitch_class(f))
        })
        .collect();
    let mut out = Grid::zeros(12, spec.n_frames());
    for f in 0..spec.n_frames() {
        let mut acc = [0.0; 12];
        for (k, class) in classes.iter().enumerate() {
            if let Some(c) = class {
                acc[*c] += spec.magnitudes.get(k, f);
            }
        }
        let max = acc.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            for v in acc.iter_mut() {
                *v /= max;
            }
        }
        out.set_column(f, &acc);
    }
    out
}

/// Per-frame fraction of adjacent-sample sign changes (zero counts as
/// positive). Frames that do not fit entirely are skipped; a clip shorter
/// than one frame is treated as a single frame.
pub fn zero_crossing_rate(clip: &AudioClip, frame_ms: f64, hop_ms: f64) -> Vec<f64> {
    let s = clip.samples();
    if s.is_empty() {
        return Vec::new();
    }
    let frame = ms_to_samples(frame_ms, clip.sample_rate());
    let hop = ms_to_samples(hop_ms, clip.sample_rate());
    let rate = |w: &[f64]| {
        if w.len() < 2 {
            return 0.0;
        }
        let changes = w.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count();
        changes as f64 / (w.len() - 1) as f64
    };
    if s.len() <= frame {
        return vec![rate(s)];
    }
    (0..=(s.len() - frame) / hop)
        .map(|i| rate(&s[i * hop..i * hop + frame]))
        .collect()
}

/// Magnitude-weighted mean frequency per frame; silent frames give 0 Hz.
pub fn spectral_centroid(spec: &SpectrogramMatrix) -> Vec<f64> {
    (0..spec.n_frames())
        .map(|f| {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..spec.n_bins() {
                let m = spec.magnitudes.get(k, f);
                num += spec.bin_frequency(k) * m;
                den += m;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}
