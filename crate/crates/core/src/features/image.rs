//! Spectrogram-to-RGB conversion with a jet colormap.

use std::io::Cursor;
use std::path::Path;

use super::spectrum::SpectrogramMatrix;

/// Image-pipeline STFT: 16 ms window, 4 ms hop, 512-point FFT, centered.
/// A 1-s block at 16 kHz yields 257 × 251.
pub const IMAGE_WIN_MS: f64 = 16.0;
pub const IMAGE_HOP_MS: f64 = 4.0;
pub const IMAGE_NFFT: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples, top row first.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>, image::ImageError> {
        let mut out = Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
    }
}

/// Piecewise-linear jet: blue → cyan → yellow → red over `[0, 1]`.
pub fn jet(x: f64) -> [f64; 3] {
    let x = x.clamp(0.0, 1.0);
    let ch = |c: f64| (1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// dB magnitudes, min-max normalized per image, jet-colored. Width is the
/// frame count, height the bin count, lowest frequency on the bottom row.
pub fn spectrogram_image(spec: &SpectrogramMatrix) -> RgbImage {
    let (n_bins, n_frames) = (spec.n_bins(), spec.n_frames());
    let db: Vec<f64> = spec
        .magnitudes
        .as_slice()
        .iter()
        .map(|m| 20.0 * (m + 1e-10).log10())
        .collect();
    let lo = db.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut pixels = Vec::with_capacity(3 * n_bins * n_frames);
    for y in 0..n_bins {
        let bin = n_bins - 1 - y;
        for f in 0..n_frames {
            let v = if range > 0.0 {
                (db[bin * n_frames + f] - lo) / range
            } else {
                0.0
            };
            pixels.extend(jet(v).map(to_byte));
        }
    }
    RgbImage {
        width: n_frames as u32,
        height: n_bins as u32,
        pixels,
    }
}
