//! Binary PGM (P5) dumps for spectrograms and confusion matrices.

use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::io::Write;
use std::path::Path;

fn write_p5(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Spectrogram dump: frames on the x-axis, mel bin 0 at the bottom row,
/// one byte per cell with `value = round((v + 1) * 127.5)`.
pub fn write_spectrogram_pgm<F: Scalar>(path: &Path, m: &MelSpectrogram<F>) -> Result<()> {
    let (mels, frames) = (m.n_mels(), m.frames());
    let mut pixels = vec![0u8; mels * frames];
    for row in 0..mels {
        let mel = mels - 1 - row;
        for f in 0..frames {
            let v = m.values.at2(mel, f).f64();
            pixels[row * frames + f] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        }
    }
    write_p5(path, frames, mels, &pixels)
}

/// Confusion-matrix heatmap: one pixel per cell, each row scaled to its
/// own maximum (row = true class, column = predicted class).
pub fn write_matrix_heatmap_pgm(path: &Path, counts: &[Vec<usize>]) -> Result<()> {
    let rows = counts.len();
    let cols = counts.first().map(|r| r.len()).unwrap_or(0);
    let mut pixels = vec![0u8; rows * cols];
    for (r, row) in counts.iter().enumerate() {
        let row_max = row.iter().copied().max().unwrap_or(0).max(1);
        for (c, &v) in row.iter().enumerate() {
            pixels[r * cols + c] = ((v as f64 / row_max as f64) * 255.0).round() as u8;
        }
    }
    write_p5(path, cols, rows, &pixels)
}
