use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentImage;

/// Parameters of a linear β schedule. Serializes with the keys `T`,
/// `beta_min`, `beta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_min: 1e-4,
            beta_max: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_min, self.beta_max)
    }
}

/// Cumulative signal fractions `alpha_bar[0..=T]`, with `alpha_bar[0] = 1`.
///
/// The cumulative product is what the forward process and the DDIM update
/// consume directly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_bar[t] = Π_{s ≤ t} (1 − β_s)` with β linearly spaced over `[beta_min, beta_max]`.
    pub fn linear(timesteps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::Config("schedule needs T >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=timesteps {
            let frac = if timesteps == 1 {
                0.0
            } else {
                (s - 1) as f64 / (timesteps - 1) as f64
            };
            let beta = beta_min + (beta_max - beta_min) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let schedule = Self {
            config: ScheduleConfig {
                timesteps,
                beta_min,
                beta_max,
            },
            alpha_bar,
        };
        schedule.check_invariants()?;
        Ok(schedule)
    }

    fn check_invariants(&self) -> Result<()> {
        if self.alpha_bar[0] != 1.0 {
            return Err(Error::Config("alpha_bar[0] must be 1".into()));
        }
        for w in self.alpha_bar.windows(2) {
            if !(w[1].is_finite() && w[1] > 0.0 && w[1] < w[0]) {
                return Err(Error::Config(
                    "alpha_bar must be finite, positive and strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    /// Total number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or_else(|| {
            Error::Config(format!("timestep {t} outside [0, {}]", self.len()))
        })
    }
}

/// `sqrt(a)·z0 + sqrt(1 − a)·eps` for a given cumulative signal fraction `a`.
pub fn forward_noise_with(z0: &LatentImage, eps: &LatentImage, alpha_bar: f64) -> Result<LatentImage> {
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.zip_map(eps, |z, e| sa * z + sn * e)
}

/// Noise `z0` to timestep `t`.
pub fn forward_noise(
    z0: &LatentImage,
    eps: &LatentImage,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentImage> {
    forward_noise_with(z0, eps, sched.alpha_bar_at(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_constant_beta() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(), &[1.0, 0.5]);
    }

    #[test]
    fn two_steps_constant_beta() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn rejects_invalid_ranges() {
        for (t, lo, hi) in [(0, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0)] {
            assert!(matches!(NoiseSchedule::linear(t, lo, hi), Err(Error::Config(_))));
        }
    }

    #[test]
    fn forward_noise_scalar_case() {
        let z0 = LatentImage::filled(1, 1, 1, 1.0);
        let eps = LatentImage::filled(1, 1, 1, 1.0);
        let z = forward_noise_with(&z0, &eps, 0.25).unwrap();
        // 0.5 + sqrt(0.75)
        assert!((z.data()[0] - 1.366_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn forward_noise_limits() {
        let z0 = LatentImage::filled(2, 2, 2, 0.3);
        let eps = LatentImage::filled(2, 2, 2, -1.7);
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        assert_eq!(forward_noise(&z0, &eps, 0, &s).unwrap(), z0);
        assert_eq!(forward_noise_with(&z0, &eps, 0.0).unwrap(), eps);
    }

    #[test]
    fn forward_noise_shape_mismatch() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let r = forward_noise(&LatentImage::zeros(1, 2, 2), &LatentImage::zeros(1, 2, 3), 3, &s);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
