//! Signal-chain checks: segmentation geometry on real-length audio and
//! Griffin-Lim magnitude consistency.

use emodiff_core::audio::griffin_lim::{
    griffin_lim, griffin_lim_from_magnitude, griffin_lim_with_residual,
};
use emodiff_core::audio::mel::{mel_spectrogram, MelFilterbank, LOG_FLOOR};
use emodiff_core::audio::stft::stft;
use emodiff_core::audio::{segment, MelSpectrogram, NormSpec, Waveform};
use emodiff_core::emotion::EmotionLabel;
use emodiff_core::tensor::Tensor;

fn tone(freq: f64, seconds: f64, sr: u32) -> Waveform {
    let n = (seconds * sr as f64) as usize;
    let samples: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() * 0.6)
        .collect();
    Waveform::new(samples, sr).unwrap()
}

/// Normalization basis from one utterance's own log-mel range.
fn basis_for(w: &Waveform, fb: &MelFilterbank) -> NormSpec {
    let log_mel = emodiff_core::audio::mel::log_mel_energies(w, fb).unwrap();
    let lo = log_mel.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = log_mel.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    NormSpec::new(lo, hi + 1e-9).unwrap()
}

#[test]
fn three_second_input_yields_256_frame_segments() {
    let sr = 22050;
    let w = tone(700.0, 3.0, sr);
    let fb = MelFilterbank::default_for(sr).unwrap();
    let norm = basis_for(&w, &fb);
    let m: MelSpectrogram<f64> =
        mel_spectrogram(&w, &fb, &norm, "utt", EmotionLabel::Happy, "s0").unwrap();
    assert_eq!(m.n_mels(), 80);
    let segs = segment(&m, 256);
    assert!(!segs.is_empty());
    for s in &segs {
        assert_eq!(s.values.shape(), &[80, 256]);
    }
}

#[test]
fn griffin_lim_zero_spectrogram_gives_silence() {
    let fb = MelFilterbank::default_for(22050).unwrap();
    let norm = NormSpec::new(LOG_FLOOR.ln(), 0.0).unwrap();
    let m = MelSpectrogram::<f64> {
        values: Tensor::filled(vec![80, 40], -1.0),
        frame_hop: 256,
        source_id: "zero".into(),
        emotion: EmotionLabel::Neutral,
        speaker: "s".into(),
    };
    let w = griffin_lim(&m, &fb, &norm, 60).unwrap();
    assert!(w.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn griffin_lim_rejects_zero_iterations() {
    let fb = MelFilterbank::default_for(22050).unwrap();
    let norm = NormSpec::new(LOG_FLOOR.ln(), 0.0).unwrap();
    let m = MelSpectrogram::<f64> {
        values: Tensor::filled(vec![80, 8], -1.0),
        frame_hop: 256,
        source_id: "z".into(),
        emotion: EmotionLabel::Neutral,
        speaker: "s".into(),
    };
    assert!(griffin_lim(&m, &fb, &norm, 0).is_err());
}

#[test]
fn griffin_lim_pure_tone_reaches_magnitude_consistency() {
    let sr = 22050;
    let w = tone(500.0, 1.0, sr);
    let spec = stft(&w).unwrap();
    let target: Vec<f64> = spec.grid.iter().map(|c| c.norm()).collect();
    let (_, residual) = griffin_lim_from_magnitude(&target, spec.frames, sr, 60).unwrap();
    assert!(
        residual < 1e-2,
        "magnitude-consistency residual {residual:.4} after 60 iterations"
    );
}

#[test]
fn griffin_lim_mel_path_stays_near_its_target() {
    // The mel filterbank is lossy, so the mel-derived magnitude estimate
    // is not exactly realizable; this pins the achievable consistency as
    // a regression bound.
    let sr = 22050;
    let w = tone(500.0, 1.0, sr);
    let fb = MelFilterbank::default_for(sr).unwrap();
    let norm = basis_for(&w, &fb);
    let m: MelSpectrogram<f64> =
        mel_spectrogram(&w, &fb, &norm, "tone", EmotionLabel::Happy, "s0").unwrap();
    let (_, residual) = griffin_lim_with_residual(&m, &fb, &norm, 60).unwrap();
    assert!(residual < 0.15, "mel-path residual {residual:.4}");
}

#[test]
fn doubling_iterations_never_increases_the_residual() {
    let sr = 22050;
    let fb = MelFilterbank::default_for(sr).unwrap();
    for freq in [300.0, 500.0, 1100.0, 2500.0] {
        let w = tone(freq, 0.6, sr);
        let norm = basis_for(&w, &fb);
        let m: MelSpectrogram<f64> =
            mel_spectrogram(&w, &fb, &norm, "tone", EmotionLabel::Sad, "s0").unwrap();
        let mut prev = f64::INFINITY;
        for iters in [15, 30, 60] {
            let (_, residual) = griffin_lim_with_residual(&m, &fb, &norm, iters).unwrap();
            assert!(
                residual <= prev + 1e-12,
                "{freq} Hz: residual rose from {prev:.6} to {residual:.6} at {iters} iterations"
            );
            prev = residual;
        }
    }
}
