use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{ConditionEmbedding, Conditioning};
use super::schedule::{forward_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor::LatentImage;

/// Noise-prediction network `ε_θ(z_t, t, C)`.
pub trait Denoiser: Send + Sync {
    fn latent_channels(&self) -> usize;

    fn predict(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<LatentImage>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn latent_channels(&self) -> usize {
        (**self).latent_channels()
    }

    fn predict(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<LatentImage> {
        (**self).predict(z_t, t, cond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance_scale: 7.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::Config(format!(
                "guidance scale must be finite and >= 0, got {}",
                self.guidance_scale
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Initial latent `z_T` drawn from the seed.
    pub fn initial_noise(&self, channels: usize, height: usize, width: usize) -> LatentImage {
        LatentImage::randn(channels, height, width, &mut self.rng())
    }
}

/// Position within a sampling run, passed to step hooks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub index: usize,
    pub t: usize,
    pub t_prev: usize,
}

/// Called after every DDIM update with the freshly computed `z_{t_prev}`.
pub type StepHook<'a> = dyn FnMut(&StepInfo, &mut LatentImage) -> Result<()> + 'a;

/// Evenly strided timesteps from `T` down towards 0, paired with their successor.
pub fn timesteps(total: usize, steps: usize) -> Result<Vec<(usize, usize)>> {
    if steps == 0 || steps > total {
        return Err(Error::Config(format!(
            "steps must lie in [1, {total}], got {steps}"
        )));
    }
    let ts: Vec<usize> = (0..steps)
        .map(|i| ((total as f64) * (steps - i) as f64 / steps as f64).round() as usize)
        .collect();
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, ts.get(i + 1).copied().unwrap_or(0)))
        .collect())
}

/// Deterministic DDIM update expressed through the cumulative signal fractions
/// at the current and the target timestep.
pub fn ddim_update(
    z_t: &LatentImage,
    eps_hat: &LatentImage,
    alpha_t: f64,
    alpha_prev: f64,
) -> Result<LatentImage> {
    let ratio = alpha_prev.sqrt() / alpha_t.sqrt();
    let eps_coef = alpha_prev.sqrt() * ((1.0 / alpha_prev - 1.0).sqrt() - (1.0 / alpha_t - 1.0).sqrt());
    z_t.zip_map(eps_hat, |z, e| ratio * z + eps_coef * e)
}

pub fn ddim_step(
    z_t: &LatentImage,
    eps_hat: &LatentImage,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<LatentImage> {
    if t_prev >= t {
        return Err(Error::Ordering { t, t_prev });
    }
    ddim_update(z_t, eps_hat, sched.alpha_bar_at(t)?, sched.alpha_bar_at(t_prev)?)
}

/// `ε_u + s·(ε_c − ε_u)`; the two degenerate scales return one side untouched.
pub fn combine_guidance(eps_uncond: LatentImage, eps_cond: LatentImage, scale: f64) -> Result<LatentImage> {
    eps_uncond.ensure_same_shape(&eps_cond, "guidance pathways")?;
    if scale == 1.0 {
        return Ok(eps_cond);
    }
    if scale == 0.0 {
        return Ok(eps_uncond);
    }
    eps_uncond.zip_map(&eps_cond, |u, c| u + scale * (c - u))
}

fn checked_predict(
    denoiser: &dyn Denoiser,
    z: &LatentImage,
    t: usize,
    cond: &ConditionEmbedding,
) -> Result<LatentImage> {
    let eps = denoiser.predict(z, t, cond)?;
    if eps.shape() != z.shape() {
        return Err(Error::Model(format!(
            "denoiser returned shape {:?} for latent {:?}",
            eps.shape(),
            z.shape()
        )));
    }
    Ok(eps)
}

/// Run `cfg.steps` guided DDIM updates from `z_T`.
///
/// Each step evaluates the denoiser once on the unconditional and once on the
/// conditional embedding, then hands the updated latent to `hook`.
pub fn sample(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    z_t: LatentImage,
    cond: &Conditioning,
    cfg: &SamplerConfig,
    mut hook: Option<&mut StepHook<'_>>,
) -> Result<LatentImage> {
    cfg.validate()?;
    if z_t.channels() != denoiser.latent_channels() {
        return Err(Error::Shape(format!(
            "latent has {} channels, denoiser expects {}",
            z_t.channels(),
            denoiser.latent_channels()
        )));
    }
    let mut z = z_t;
    for (index, (t, t_prev)) in timesteps(sched.len(), cfg.steps)?.into_iter().enumerate() {
        let eps_u = checked_predict(denoiser, &z, t, &cond.uncond)?;
        let eps_c = checked_predict(denoiser, &z, t, &cond.cond)?;
        let eps = combine_guidance(eps_u, eps_c, cfg.guidance_scale)?;
        z = ddim_step(&z, &eps, t, t_prev, sched)?;
        if let Some(h) = hook.as_deref_mut() {
            h(&StepInfo { index, t, t_prev }, &mut z)?;
        }
    }
    Ok(z)
}

/// One draw of `(t, ε, z_t)` for the training objective.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub t: usize,
    pub eps: LatentImage,
    pub z_t: LatentImage,
}

/// `t ~ U[1, T]`, `ε ~ N(0, I)`, `z_t` from the forward process.
pub fn draw_training_sample<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    z0: &LatentImage,
    rng: &mut R,
) -> Result<TrainingSample> {
    let t = rng.random_range(1..=sched.len());
    let eps = LatentImage::randn(z0.channels(), z0.height(), z0.width(), rng);
    let z_t = forward_noise(z0, &eps, t, sched)?;
    Ok(TrainingSample { t, eps, z_t })
}

/// Mean squared error between the drawn noise and the denoiser's estimate.
pub fn training_loss<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    z0: &LatentImage,
    cond: &ConditionEmbedding,
    rng: &mut R,
) -> Result<f64> {
    if !z0.is_finite() {
        return Err(Error::Validation("z0 contains non-finite values".into()));
    }
    let s = draw_training_sample(sched, z0, rng)?;
    let eps_hat = checked_predict(denoiser, &s.z_t, s.t, cond)?;
    s.eps.mean_squared_diff(&eps_hat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> LatentImage {
        LatentImage::filled(1, 1, 1, v)
    }

    #[test]
    fn ddim_hand_evaluated() {
        let z = ddim_update(&scalar(1.0), &scalar(0.0), 0.25, 0.64).unwrap();
        assert!((z.data()[0] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn ddim_equal_alphas_is_identity() {
        let z = LatentImage::filled(2, 3, 3, 0.7);
        let e = LatentImage::filled(2, 3, 3, -4.0);
        assert_eq!(ddim_update(&z, &e, 0.3, 0.3).unwrap(), z);
    }

    #[test]
    fn ddim_rejects_bad_order() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        let z = scalar(0.0);
        assert!(matches!(ddim_step(&z, &z, 3, 3, &s), Err(Error::Ordering { .. })));
        assert!(matches!(ddim_step(&z, &z, 3, 5, &s), Err(Error::Ordering { .. })));
    }

    #[test]
    fn timesteps_stride() {
        let ts = timesteps(1000, 50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], (1000, 980));
        assert_eq!(ts[49], (20, 0));
        assert_eq!(timesteps(10, 1).unwrap(), vec![(10, 0)]);
        assert!(timesteps(10, 11).is_err());
        assert!(timesteps(10, 0).is_err());
    }

    #[test]
    fn guidance_degenerate_scales() {
        let u = scalar(1.0);
        let c = scalar(3.0);
        assert_eq!(combine_guidance(u.clone(), c.clone(), 1.0).unwrap(), c);
        assert_eq!(combine_guidance(u.clone(), c.clone(), 0.0).unwrap(), u);
        assert_eq!(combine_guidance(u, c, 2.0).unwrap().data()[0], 5.0);
    }

    #[test]
    fn sampler_config_validation() {
        assert!(SamplerConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { guidance_scale: -1.0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }
}
