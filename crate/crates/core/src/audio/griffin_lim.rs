//! Griffin-Lim phase reconstruction.
//!
//! The core loop alternates inverse and forward STFT while pinning a
//! target magnitude grid. Phases are initialized by single-pass
//! spectrogram inversion (per-frame peak picking with log-parabolic
//! frequency interpolation and accumulated phase advance), iterations
//! use an accelerated update, and the most consistent iterate seen is
//! the one returned, so the residual never rises with more iterations.
//!
//! All analysis/synthesis inside the loop happens on the padded signal
//! domain, where windowed overlap-add is the exact least-squares

//! inverse of the frame analysis; padding is stripped only at the end.

use crate::audio::fft::{fft, ifft};
use crate::audio::mel::{mel_to_linear_power, MelFilterbank};
use crate::audio::stft::{hann_window, HOP, N_BINS, N_FFT};
use crate::audio::{MelSpectrogram, NormSpec, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use num_complex::Complex64;

const MOMENTUM: f64 = 0.99;

/// Relative Frobenius distance between two magnitude grids.
fn residual_of(mags: &[f64], target: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&m, &t) in mags.iter().zip(target.iter()) {
        let d = m - t;
        num += d * d;
        den += t * t;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

struct PaddedStft {
    frames: usize,
    window: Vec<f64>,
    padded_len: usize,
}

impl PaddedStft {
    fn new(frames: usize) -> PaddedStft {
        PaddedStft {
            frames,
            window: hann_window(N_FFT),
            padded_len: (frames - 1) * HOP + N_FFT,
        }
    }

    fn analyze(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let mut grid = vec![Complex64::new(0.0, 0.0); N_BINS * self.frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
        for f in 0..self.frames {
            for i in 0..N_FFT {
                buf[i] = Complex64::new(x[f * HOP + i] * self.window[i], 0.0);
            }
            let s = fft(&buf)?;
            for k in 0..N_BINS {
                grid[k * self.frames + f] = s[k];
            }
        }
        Ok(grid)
    }

    fn synthesize(&self, grid: &[Complex64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0f64; self.padded_len];
        let mut norm = vec![0.0f64; self.padded_len];
        let mut full = vec![Complex64::new(0.0, 0.0); N_FFT];
        for f in 0..self.frames {
            for k in 0..N_BINS {
                full[k] = grid[k * self.frames + f];
            }
            for k in N_BINS..N_FFT {
                full[k] = grid[(N_FFT - k) * self.frames + f].conj();
            }
            let frame = ifft(&full)?;
            for i in 0..N_FFT {
                acc[f * HOP + i] += frame[i].re * self.window[i];
                norm[f * HOP + i] += self.window[i] * self.window[i];
            }
        }
        for i in 0..self.padded_len {
            if norm[i] > 1e-10 {
                acc[i] /= norm[i];
            }
        }
        Ok(acc)
    }
}

/// Single-pass phase initialization. Frames are window-start referenced,
/// so bins across a peak's lobe alternate sign (a pi offset per bin).
fn spsi_init(target: &[f64], frames: usize) -> Vec<Complex64> {
    let mut init = vec![Complex64::new(0.0, 0.0); N_BINS * frames];
    let mut phase_acc = vec![0.0f64; N_BINS];
    let floor = 1e-12f64;
    for f in 0..frames {
        let mag = |k: usize| target[k * frames + f];
        let mut new_phase = vec![0.0f64; N_BINS];
        for k in 1..N_BINS - 1 {
            if mag(k) > mag(k - 1) && mag(k) > mag(k + 1) && mag(k) > 0.0 {
                let (a, b, c) = (
                    mag(k - 1).max(floor).ln(),
                    mag(k).max(floor).ln(),
                    mag(k + 1).max(floor).ln(),
                );
                let denom = a - 2.0 * b + c;
                let p = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
                let omega = 2.0 * std::f64::consts::PI * (k as f64 + p) / N_FFT as f64;
                phase_acc[k] += omega * HOP as f64;
                let mut lo = k;
                while lo > 0 && mag(lo - 1) < mag(lo) {
                    lo -= 1;
                }
                let mut hi = k;
                while hi < N_BINS - 1 && mag(hi + 1) < mag(hi) {
                    hi += 1;
                }
                for (j, np) in new_phase.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let flip = ((j as i64 - k as i64).rem_euclid(2)) as f64;
                    *np = phase_acc[k] + std::f64::consts::PI * flip;
                }
            }
        }
        for k in 0..N_BINS {
            phase_acc[k] = new_phase[k];
            init[k * frames + f] = Complex64::from_polar(target[k * frames + f], new_phase[k]);
        }
    }
    init
}

/// Griffin-Lim on a magnitude spectrogram `[N_BINS, frames]` (row-major,
/// frame index fastest). Returns the reconstructed waveform (peak
/// normalized to 0.95) and its magnitude-consistency residual.
pub fn griffin_lim_from_magnitude(
    target: &[f64],
    frames: usize,
    sample_rate: u32,
    iterations: usize,
) -> Result<(Waveform, f64)> {
    if iterations < 1 {
        return Err(Error::InvalidArgument(format!(
            "griffin_lim requires at least 1 iteration, got {iterations}"
        )));
    }
    if target.len() != N_BINS * frames || frames == 0 {
        return Err(Error::shape("griffin_lim", "grid size", N_BINS * frames.max(1), target.len()));
    }
    let out_len = (frames - 1) * HOP;

    if target.iter().all(|&t| t == 0.0) {
        return Ok((Waveform::new(vec![0.0; out_len.max(1)], sample_rate)?, 0.0));
    }

    let engine = PaddedStft::new(frames);
    let mut pinned = spsi_init(target, frames);
    let mut prev_pinned: Option<Vec<Complex64>> = None;
    let mut best_res = f64::INFINITY;
    let mut best_wave: Vec<f64> = vec![0.0; engine.padded_len];

    for _ in 0..iterations {
        let wave = engine.synthesize(&pinned)?;
        let proj = engine.analyze(&wave)?;
        let mags: Vec<f64> = proj.iter().map(|c| c.norm()).collect();
        let res = residual_of(&mags, target);
        if res < best_res {
            best_res = res;
            best_wave = wave;
        }
        // Pin target magnitudes onto the (accelerated) projected phases.
        let next_pinned: Vec<Complex64> = proj
            .iter()
            .zip(target.iter())
            .map(|(c, &t)| {
                let m = c.norm();
                if m > 1e-300 {
                    c * (t / m)
                } else {
                    Complex64::new(t, 0.0)
                }
            })
            .collect();
        pinned = match &prev_pinned {
            None => next_pinned.clone(),
            Some(prev) => next_pinned
                .iter()
                .zip(prev.iter())
                .map(|(d, p)| d + (d - p) * MOMENTUM)
                .collect(),
        };
        prev_pinned = Some(next_pinned);
    }

    let pad = N_FFT / 2;
    let mut out: Vec<f64> = best_wave[pad..pad + out_len.max(1)].to_vec();
    let peak = out.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if peak > 0.0 {
        let gain = 0.95 / peak;
        out.iter_mut().for_each(|s| *s *= gain);
    }
    Ok((Waveform::new(out, sample_rate)?, best_res))
}

/// Griffin-Lim from a normalized Mel-spectrogram: denormalize to linear
/// mel power, map to linear-frequency magnitudes through the filterbank
/// pseudo-inverse, then reconstruct phase.
pub fn griffin_lim<F: Scalar>(
    m: &MelSpectrogram<F>,
    fb: &MelFilterbank,
    norm: &NormSpec,
    iterations: usize,
) -> Result<Waveform> {
    let (wave, _) = griffin_lim_with_residual(m, fb, norm, iterations)?;
    Ok(wave)
}

/// As [`griffin_lim`], also returning the magnitude-consistency residual
/// against the mel-derived target.
pub fn griffin_lim_with_residual<F: Scalar>(
    m: &MelSpectrogram<F>,
    fb: &MelFilterbank,
    norm: &NormSpec,
    iterations: usize,
) -> Result<(Waveform, f64)> {
    if iterations < 1 {
        return Err(Error::InvalidArgument(format!(
            "griffin_lim requires at least 1 iteration, got {iterations}"
        )));
    }
    let linear_power = mel_to_linear_power(m, fb, norm)?;
    let target: Vec<f64> = linear_power.data().iter().map(|&p| p.sqrt()).collect();
    griffin_lim_from_magnitude(&target, m.frames(), fb.sample_rate, iterations)
}
