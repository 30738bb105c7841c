//! Conditional-diffusion data augmentation for speech emotion recognition.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`tensor`]: dense tensors with reverse-mode automatic differentiation,
//!   the network primitives (1-D convolution, self-attention, LSTM cells)
//!   and the adaptive-moment optimizer,
//! - [`audio`]: waveform ingestion, STFT / Mel-spectrogram extraction and
//!   Griffin-Lim inversion,
//! - [`diffusion`]: noise schedules, the forward/reverse process math,
//!   the hybrid training loss and the (strided) sampling loop,
//! - [`denoiser`]: the conditional 1-D residual network that predicts
//!   noise and variance per timestep, plus its training loop,
//! - [`classifier`]: the CNN-BLSTM emotion classifier with mixup,
//! - [`eval`]: UAR / MAD metrics, LOSO and cross-corpus protocols,
//! - [`toy`]: a deterministic procedural corpus generator so experiments
//!   run without licensed data,
//! - [`io`]: the EDTF tensor format, PGM dumps, CSV manifests and
//!   checkpoints.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training,
//! `f64` for verification runs).

pub mod audio;
pub mod classifier;
pub mod denoiser;
pub mod diffusion;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod io;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod toy;

pub use emotion::EmotionLabel;
pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::Tensor;
