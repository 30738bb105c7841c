//! The conditional 1-D residual denoiser: predicts per-timestep noise
//! and variance from `(x_t, t, condition)`.

pub mod condition;
pub mod network;
pub mod train;

pub use condition::{ConditionSpec, ConditionVector, HashedEmbedder, TokenEmbedder};
pub use network::{timestep_embedding, Denoiser, DenoiserConfig};
pub use train::{train_diffusion, DiffusionTrainConfig, LossRow, TrainedDiffusion};
