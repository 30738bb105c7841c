//! Triangular Mel filterbank and the waveform-to-spectrogram pipeline.

use crate::audio::stft::{stft, ComplexSpectrogram, HOP, N_BINS, N_FFT};
use crate::audio::{MelSpectrogram, NormSpec, Waveform};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-5;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Peak-normalized triangular filters on the mel scale.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    pub f_max: f64,
    /// `[n_mels, n_fft/2 + 1]` nonnegative weights.
    pub weights: Tensor<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<MelFilterbank> {
        if f_min < 0.0 || f_max <= f_min || f_max > sample_rate as f64 / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid mel range {f_min}..{f_max} for sample rate {sample_rate}"
            )));
        }
        let n_bins = N_BINS;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        // n_mels + 2 anchor frequencies, evenly spaced in mel.
        let anchors: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / N_FFT as f64;
        let mut weights = vec![0.0f64; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (anchors[m], anchors[m + 1], anchors[m + 2]);
            let mut peak = 0.0f64;
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights[m * n_bins + k] = w;
                peak = peak.max(w);
            }
            if peak <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "mel filter {m} covers no FFT bin (range {lo:.1}..{hi:.1} Hz)"
                )));
            }
            for k in 0..n_bins {
                weights[m * n_bins + k] /= peak;
            }
        }
        Ok(MelFilterbank {
            n_mels,
            n_fft: N_FFT,
            sample_rate,
            f_min,
            f_max,
            weights: Tensor::from_vec(vec![n_mels, n_bins], weights)?,
        })
    }

    pub fn default_for(sample_rate: u32) -> Result<MelFilterbank> {
        MelFilterbank::new(N_MELS, sample_rate, 0.0, 8000.0)
    }

    /// Mel power vector for one frame of linear power spectrum.
    fn apply(&self, power: &[f64]) -> Vec<f64> {
        let n_bins = power.len();
        (0..self.n_mels)
            .map(|m| {
                let row = &self.weights.data()[m * n_bins..(m + 1) * n_bins];
                row.iter().zip(power.iter()).map(|(w, p)| w * p).sum()
            })
            .collect()
    }

    /// Moore-Penrose pseudo-inverse `W^T (W W^T)^{-1}`, valid because the
    /// triangular rows are linearly independent. `[n_bins, n_mels]`.
    pub fn pseudo_inverse(&self) -> Result<Tensor<f64>> {
        let n = self.n_mels;
        let bins = self.weights.shape()[1];
        let w = self.weights.data();
        // Gram matrix W W^T.
        let mut gram = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..bins {
                    acc += w[i * bins + k] * w[j * bins + k];
                }
                gram[i * n + j] = acc;
            }
        }
        let inv = invert(&mut gram, n)
            .ok_or_else(|| Error::Data("mel filterbank Gram matrix is singular".into()))?;
        // W^T * inv
        let mut out = vec![0.0f64; bins * n];
        for k in 0..bins {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += w[i * bins + k] * inv[i * n + j];
                }
                out[k * n + j] = acc;
            }
        }
        Tensor::from_vec(vec![bins, n], out)
    }
}

/// Gauss-Jordan inverse with partial pivoting; `a` is destroyed.
fn invert(a: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0f64; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * n + col].abs() < 1e-12 {
            return None;
        }
        for j in 0..n {
            a.swap(col * n + j, pivot * n + j);
            inv.swap(col * n + j, pivot * n + j);
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let factor = a[r * n + col];
                if factor != 0.0 {
                    for j in 0..n {
                        a[r * n + j] -= factor * a[col * n + j];
                        inv[r * n + j] -= factor * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Log-mel energies `ln(mel_power + 1e-5)` of shape `[n_mels, frames]`,
/// before normalization. Used for the corpus min/max pass.
pub fn log_mel_energies(w: &Waveform, fb: &MelFilterbank) -> Result<Tensor<f64>> {
    let spec = stft(w)?;
    log_mel_of_spec(&spec, fb)
}

fn log_mel_of_spec(spec: &ComplexSpectrogram, fb: &MelFilterbank) -> Result<Tensor<f64>> {
    let frames = spec.frames;
    let mut out = vec![0.0f64; fb.n_mels * frames];
    let mut power = vec![0.0f64; spec.bins];
    for f in 0..frames {
        for k in 0..spec.bins {
            power[k] = spec.grid[k * frames + f].norm_sqr();
        }
        let mel = fb.apply(&power);
        for (m, &e) in mel.iter().enumerate() {
            out[m * frames + f] = (e + LOG_FLOOR).ln();
        }
    }
    Tensor::from_vec(vec![fb.n_mels, frames], out)
}

/// Full pipeline: STFT power, mel projection, log, affine normalization
/// into `[-1, 1]` with the corpus basis.
pub fn mel_spectrogram<F: Scalar>(
    w: &Waveform,
    fb: &MelFilterbank,
    norm: &NormSpec,
    source_id: &str,
    emotion: EmotionLabel,
    speaker: &str,
) -> Result<MelSpectrogram<F>> {
    let log_mel = log_mel_energies(w, fb)?;
    let shape = log_mel.shape().to_vec();
    let data: Vec<F> = log_mel.data().iter().map(|&v| F::of(norm.normalize(v))).collect();
    Ok(MelSpectrogram {
        values: Tensor::from_vec(shape, data)?,
        frame_hop: HOP,
        source_id: source_id.to_string(),
        emotion,
        speaker: speaker.to_string(),
    })
}

/// Iterations of the nonnegative refinement in [`mel_to_linear_power`].
const NNLS_ITERS: usize = 150;

/// Recovers linear-frequency power from normalized values. The
/// filterbank pseudo-inverse gives the least-squares solution; because
/// clamping its negative ringing breaks the mel fit, the clamped result
/// is refined by multiplicative nonnegative least-squares updates
/// (`x <- x * (W^T m) / (W^T W x)`). `[n_bins, frames]`.
pub fn mel_to_linear_power<F: Scalar>(
    m: &MelSpectrogram<F>,
    fb: &MelFilterbank,
    norm: &NormSpec,
) -> Result<Tensor<f64>> {
    if m.n_mels() != fb.n_mels {
        return Err(Error::shape("mel_to_linear_power", "mel bins", fb.n_mels, m.n_mels()));
    }
    let pinv = fb.pseudo_inverse()?;
    let bins = pinv.shape()[0];
    let n_mels = fb.n_mels;
    let frames = m.frames();
    let w = fb.weights.data();
    let mut out = vec![0.0f64; bins * frames];
    let mut mel_f = vec![0.0f64; n_mels];
    let mut x = vec![0.0f64; bins];
    let mut wt_m = vec![0.0f64; bins];
    let mut wx = vec![0.0f64; n_mels];
    for f in 0..frames {
        for mel in 0..n_mels {
            let v = m.values.at2(mel, f).f64();
            mel_f[mel] = (norm.denormalize(v).exp() - LOG_FLOOR).max(0.0);
        }
        for k in 0..bins {
            let mut acc = 0.0;
            for (mel, &mf) in mel_f.iter().enumerate() {
                acc += pinv.at2(k, mel) * mf;
            }
            x[k] = acc.max(0.0);
        }
        // Unlock zero-clamped bins so the multiplicative updates can
        // move them, then refine toward the exact mel fit.
        for k in 0..bins {
            let mut acc = 0.0;
            for (mel, &mf) in mel_f.iter().enumerate() {
                acc += w[mel * bins + k] * mf;
            }
            wt_m[k] = acc;
            x[k] = x[k].max(1e-4 * acc);
        }
        for _ in 0..NNLS_ITERS {
            for (mel, slot) in wx.iter_mut().enumerate() {
                let row = &w[mel * bins..(mel + 1) * bins];
                *slot = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            }
            for k in 0..bins {
                let mut wtwx = 0.0;
                for (mel, &v) in wx.iter().enumerate() {
                    wtwx += w[mel * bins + k] * v;
                }
                if wtwx > 1e-30 {
                    x[k] *= wt_m[k] / wtwx;
                }
            }
        }
        for k in 0..bins {
            out[k * frames + f] = x[k];
        }
    }
    Tensor::from_vec(vec![bins, frames], out)
}
