//! Complex STFT / inverse STFT shared by feature extraction, noise
//! reduction and the phase vocoder.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `n` reflected about both ends (no edge
/// repeat), valid for any integer offset.
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as i64 {
        m = period - m;
    }
    m as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Padding {
    /// Frames start at sample 0.
    None,
    /// Reflect-pad by `win / 2` at both ends.
    Reflect,
    /// Zero-pad by `win / 2` at both ends.
    Zero,
}

pub(crate) struct StftPlan {
    pub win: usize,
    pub hop: usize,
    pub nfft: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(win: usize, hop: usize, nfft: usize) -> Self {
        assert!(win >= 1 && hop >= 1 && win <= nfft);
        let mut planner = FftPlanner::new();
        Self {
            win,
            hop,
            nfft,
            window: hann(win),
            forward: planner.plan_fft_forward(nfft),
            inverse: planner.plan_fft_inverse(nfft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize, padding: Padding) -> usize {
        match padding {
            Padding::None => {
                if n_samples <= self.win {
                    1
                } else {
                    1 + (n_samples - self.win) / self.hop
                }
            }
            Padding::Reflect | Padding::Zero => 1 + n_samples / self.hop,
        }
    }

    fn sample(&self, samples: &[f64], idx: i64, padding: Padding) -> f64 {
        let n = samples.len();
        if idx >= 0 && (idx as usize) < n {
            return samples[idx as usize];
        }
        match padding {
            Padding::Reflect => samples[reflect_index(idx, n)],
            _ => 0.0,
        }
    }

    /// One-sided complex spectra, one `Vec` of `nfft/2 + 1` bins per frame.
    pub fn forward(&self, samples: &[f64], padding: Padding) -> Vec<Vec<Complex64>> {
        assert!(!samples.is_empty());
        let offset = match padding {
            Padding::None => 0,
            _ => (self.win / 2) as i64,
        };
        let n_frames = self.n_frames(samples.len(), padding);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..n_frames)
            .map(|f| {
                let start = (f * self.hop) as i64 - offset;
                for (j, slot) in buf.iter_mut().enumerate() {
                    *slot = if j < self.win {
                        Complex64::new(self.sample(samples, start + j as i64, padding) * self.window[j], 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`StftPlan::forward`] with centered
    /// (`win/2` padded) framing, returning exactly `length` samples.
    pub fn inverse(&self, frames: &[Vec<Complex64>], length: usize) -> Vec<f64> {
        let offset = (self.win / 2) as i64;
        let mut out = vec![0.0; length];
        let mut norm = vec![0.0; length];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let n_bins = self.n_bins();
        for (f, spec) in frames.iter().enumerate() {
            debug_assert_eq!(spec.len(), n_bins);
            buf[..n_bins].copy_from_slice(spec);
            // Hermitian completion; DC and Nyquist must be real.
            buf[0].im = 0.0;
            if self.nfft.is_multiple_of(2) {
                buf[n_bins - 1].im = 0.0;
            }
            for k in n_bins..self.nfft {
                buf[k] = buf[self.nfft - k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = (f * self.hop) as i64 - offset;
            for j in 0..self.win {
                let t = start + j as i64;
                if t < 0 || t as usize >= length {
                    continue;
                }
                let w = self.window[j];
                out[t as usize] += buf[j].re / self.nfft as f64 * w;
                norm[t as usize] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-10 {
                *o /= n;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}
