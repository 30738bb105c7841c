//! Short-time Fourier transform and its inverse.

use crate::audio::fft::{fft, ifft};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use num_complex::Complex64;

pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
pub const N_BINS: usize = N_FFT / 2 + 1;

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Mirror index for reflection padding: positions outside `0..len` fold
/// back without repeating the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Complex spectrogram of shape `[N_BINS, frames]` (column-major frame
/// access via `grid[bin * frames + frame]`).
pub struct ComplexSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub grid: Vec<Complex64>,
}

/// STFT with `n_fft=1024`, `hop=256`, Hann window of length 1024, and
/// reflection padding of `n_fft/2` at both ends. Frame count is
/// `floor(len / hop) + 1`.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    let len = w.samples.len();
    if len == 0 {
        return Err(Error::Data("stft: empty waveform".into()));
    }
    let window = hann_window(N_FFT);
    let frames = len / HOP + 1;
    let pad = N_FFT / 2;
    let mut grid = vec![Complex64::new(0.0, 0.0); N_BINS * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    for f in 0..frames {
        let start = f as isize * HOP as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let sample = if idx < 0 || idx >= len as isize {
                w.samples[reflect_index(idx, len)]
            } else {
                w.samples[idx as usize]
            };
            *b = Complex64::new(sample * window[i], 0.0);
        }
        let spec = fft(&buf)?;
        for k in 0..N_BINS {
            grid[k * frames + f] = spec[k];
        }
    }
    Ok(ComplexSpectrogram { bins: N_BINS, frames, grid })
}

/// Inverse STFT by windowed overlap-add with squared-window
/// normalization. Returns `(frames - 1) * hop` samples (the padding
/// introduced by [`stft`] is stripped).
pub fn istft(spec: &ComplexSpectrogram, target_len: usize) -> Result<Vec<f64>> {
    if spec.bins != N_BINS {
        return Err(Error::shape("istft", "bin count", N_BINS, spec.bins));
    }
    let frames = spec.frames;
    let window = hann_window(N_FFT);
    let padded_len = (frames - 1) * HOP + N_FFT;
    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    let mut full = vec![Complex64::new(0.0, 0.0); N_FFT];
    for f in 0..frames {
        // Rebuild the Hermitian-symmetric full spectrum from the half.
        for k in 0..N_BINS {
            full[k] = spec.grid[k * frames + f];
        }
        for k in N_BINS..N_FFT {
            full[k] = spec.grid[(N_FFT - k) * frames + f].conj();
        }
        let frame = ifft(&full)?;
        let start = f * HOP;
        for i in 0..N_FFT {
            acc[start + i] += frame[i].re * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let pad = N_FFT / 2;
    let avail = padded_len - pad;
    let out_len = target_len.min(avail);
    let mut out = vec![0.0f64; target_len];
    for (i, o) in out.iter_mut().take(out_len).enumerate() {
        let n = norm[pad + i];
        *o = if n > 1e-10 { acc[pad + i] / n } else { 0.0 };
    }
    Ok(out)
}
