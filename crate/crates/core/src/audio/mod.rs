//! Waveform-to-Mel-spectrogram frontend and Griffin-Lim inversion.

pub mod fft;
pub mod griffin_lim;
pub mod mel;
pub mod stft;
pub mod wav;

use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

/// Mono waveform with finite samples in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Waveform> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("waveform contains non-finite samples".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }
}

/// Corpus-level normalization basis: min/max of `ln(mel_power + 1e-5)`,
/// shared by train / sample / eval so grids stay comparable.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NormSpec {
    pub log_min: f64,
    pub log_max: f64,
}

impl NormSpec {
    pub fn new(log_min: f64, log_max: f64) -> Result<NormSpec> {
        if !(log_min.is_finite() && log_max.is_finite()) || log_min >= log_max {
            return Err(Error::Data(format!(
                "degenerate normalization basis: min {log_min}, max {log_max}"
            )));
        }
        Ok(NormSpec { log_min, log_max })
    }

    /// Affine map of a log energy into `[-1, 1]`, clamped.
    pub fn normalize(&self, log_value: f64) -> f64 {
        let v = 2.0 * (log_value - self.log_min) / (self.log_max - self.log_min) - 1.0;
        v.clamp(-1.0, 1.0)
    }

    /// Inverse of the affine map (no clamping).
    pub fn denormalize(&self, v: f64) -> f64 {
        (v + 1.0) * 0.5 * (self.log_max - self.log_min) + self.log_min
    }
}

/// Grid of normalized log-Mel energies in `[-1, 1]`, shape
/// `[n_mels, frames]`, with its provenance labels. This is the diffusion
/// data point.
#[derive(Clone, Debug)]
pub struct MelSpectrogram<F: Scalar> {
    pub values: Tensor<F>,
    pub frame_hop: usize,
    pub source_id: String,
    pub emotion: EmotionLabel,
    pub speaker: String,
}

impl<F: Scalar> MelSpectrogram<F> {
    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// The padding value for short segments: the normalized floor.
pub const SEGMENT_FLOOR: f64 = -1.0;

/// Splits a spectrogram into non-overlapping fixed-width segments. The
/// final remainder (and any utterance shorter than one segment) is
/// padded with the normalized floor. Labels are inherited; segment ids
/// get a `_segNN` suffix when more than one segment is produced.
pub fn segment<F: Scalar>(
    m: &MelSpectrogram<F>,
    frames_per_segment: usize,
) -> Vec<MelSpectrogram<F>> {
    let n_mels = m.n_mels();
    let frames = m.frames();
    let n_segments = frames.div_ceil(frames_per_segment).max(1);
    let floor = F::of(SEGMENT_FLOOR);
    let mut out = Vec::with_capacity(n_segments);
    for s in 0..n_segments {
        let start = s * frames_per_segment;
        let mut data = vec![floor; n_mels * frames_per_segment];
        for mel in 0..n_mels {
            for f in 0..frames_per_segment {
                if start + f < frames {
                    data[mel * frames_per_segment + f] = m.values.at2(mel, start + f);
                }
            }
        }
        let source_id = if n_segments == 1 {
            m.source_id.clone()
        } else {
            format!("{}_seg{s:02}", m.source_id)
        };
        out.push(MelSpectrogram {
            values: Tensor::from_vec(vec![n_mels, frames_per_segment], data).expect("segment shape"),
            frame_hop: m.frame_hop,
            source_id,
            emotion: m.emotion,
            speaker: m.speaker.clone(),
        });
    }
    out
}

/// The utterance a segment belongs to: the source id with any `_segNN`
/// suffix removed.
pub fn utterance_id(source_id: &str) -> &str {
    match source_id.rfind("_seg") {
        Some(pos) if source_id[pos + 4..].chars().all(|c| c.is_ascii_digit())
            && pos + 4 < source_id.len() =>
        {
            &source_id[..pos]
        }
        _ => source_id,
    }
}
