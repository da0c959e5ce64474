//! Noise schedule, forward noising, deterministic DDIM sampling with
//! classifier-free guidance, and the ε-prediction training objective.

mod embedding;
mod sampler;
mod schedule;

pub(crate) use embedding::fnv1a;
pub use embedding::{ConditionEmbedding, Conditioning, HashingEmbedder, TextEmbedder};
pub use sampler::{
    combine_guidance, ddim_step, ddim_update, draw_training_sample, sample, timesteps,
    training_loss, Denoiser, SamplerConfig, StepHook, StepInfo, TrainingSample,
};
pub use schedule::{forward_noise, forward_noise_with, NoiseSchedule, ScheduleConfig};

use serde::{Deserialize, Serialize};

/// Flat JSON config block: `T`, `beta_min`, `beta_max`, `steps`, `guidance_scale`, `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiffusionConfig {
    #[serde(flatten)]
    pub schedule: ScheduleConfig,
    #[serde(flatten)]
    pub sampler: SamplerConfig,
}
