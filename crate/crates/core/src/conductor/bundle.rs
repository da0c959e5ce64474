use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{IdentityCodec, LatentCodec, PoolingCodec};
use crate::branch::{
    inpaint_sample, load_base, load_branch, save_base, save_branch, BranchNetwork, DiffusionContext,
    InjectionConfig,
};
use crate::diffusion::{HashingEmbedder, NoiseSchedule, SamplerConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::Mask;
use crate::model::{ConvDenoiser, CountingDenoiser, LayeredDenoiser, ModelConfig};
use crate::nn::Parameters;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const BASE_FILE: &str = "base.json";
pub const BRANCH_FILE: &str = "branch.json";

/// Architecture and schedule shared by the base and the branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    /// 1 selects the identity codec, larger values the pooling codec.
    #[serde(default = "one")]
    pub codec_factor: usize,
}

fn one() -> usize {
    1
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            codec_factor: 1,
        }
    }
}

/// Frozen base, branch, schedule, text embedder and codec.
pub struct ModelBundle {
    pub config: BundleConfig,
    pub base: ConvDenoiser,
    pub branch: BranchNetwork,
    pub schedule: NoiseSchedule,
    pub embedder: HashingEmbedder,
    codec: Box<dyn LatentCodec>,
}

/// Raw sample plus the number of base-denoiser evaluations it took.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintOutput {
    pub image: Image,
    pub denoiser_calls: usize,
}

impl ModelBundle {
    pub fn new(config: BundleConfig, base: ConvDenoiser, branch: BranchNetwork) -> Result<Self> {
        config.model.validate()?;
        if *base.config() != config.model {
            return Err(Error::Model("base model config differs from bundle config".into()));
        }
        branch.ensure_compatible(&base)?;
        let codec: Box<dyn LatentCodec> = match config.codec_factor {
            0 => return Err(Error::Config("codec_factor must be >= 1".into())),
            1 => Box::new(IdentityCodec),
            f => Box::new(PoolingCodec { factor: f }),
        };
        if codec.latent_channels() != config.model.latent_channels {
            return Err(Error::Config(format!(
                "codec produces {} channels, model expects {}",
                codec.latent_channels(),
                config.model.latent_channels
            )));
        }
        Ok(Self {
            schedule: config.schedule.build()?,
            embedder: HashingEmbedder::new(config.model.cond_dim),
            config,
            base,
            branch,
            codec,
        })
    }

    /// Randomly initialised base with a branch copied from it (zero links).
    pub fn untrained(config: BundleConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = ConvDenoiser::random(config.model, &mut rng)?;
        let branch = BranchNetwork::from_base(&base);
        Self::new(config, base, branch)
    }

    pub fn codec(&self) -> &dyn LatentCodec {
        self.codec.as_ref()
    }

    pub fn context(&self) -> DiffusionContext<'_> {
        DiffusionContext {
            schedule: &self.schedule,
            embedder: &self.embedder,
            codec: self.codec.as_ref(),
        }
    }

    /// Dual-branch sample for `masked_image`, counting base evaluations.
    pub fn inpaint(
        &self,
        masked_image: &Image,
        mask: &Mask,
        caption: &str,
        icfg: &InjectionConfig,
        scfg: &SamplerConfig,
    ) -> Result<InpaintOutput> {
        let counter = CountingDenoiser::new(&self.base);
        let image = inpaint_sample(&counter, &self.branch, &self.context(), masked_image, mask, caption, icfg, scfg)?;
        Ok(InpaintOutput {
            image,
            denoiser_calls: counter.calls(),
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(BUNDLE_FILE), serde_json::to_vec_pretty(&self.config)?)?;
        save_base(dir.join(BASE_FILE), &self.base)?;
        save_branch(dir.join(BRANCH_FILE), &self.branch, Some(self.base.parameter_checksum()))?;
        Ok(())
    }

    /// Load a checkpoint directory; the branch must have been trained against
    /// this exact base when it records a base checksum.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg_path = dir.join(BUNDLE_FILE);
        let bytes = fs::read(&cfg_path).map_err(|e| Error::load(&cfg_path, e))?;
        let config: BundleConfig = serde_json::from_slice(&bytes).map_err(|e| Error::load(&cfg_path, e))?;
        let base = load_base(dir.join(BASE_FILE))?;
        let ckpt = load_branch(dir.join(BRANCH_FILE))?;
        if let Some(sum) = &ckpt.base_checksum {
            if *sum != base.checksum() {
                return Err(Error::load(dir.join(BRANCH_FILE), "branch was trained against a different base"));
            }
        }
        Self::new(config, base, ckpt.network)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = ModelBundle::untrained(BundleConfig::default(), 5).unwrap();
        b.save(dir.path()).unwrap();
        let back = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(back.base, b.base);
        assert_eq!(back.branch, b.branch);
        assert_eq!(back.config, b.config);
    }

    #[test]
    fn call_count_is_two_per_step() {
        let b = ModelBundle::untrained(BundleConfig::default(), 1).unwrap();
        let img = Image::filled(8, 8, [0.2, 0.4, 0.6]);
        let mask = Mask::from_fn(8, 8, |y, _| if y < 4 { 1.0 } else { 0.0 });
        let scfg = SamplerConfig { steps: 7, guidance_scale: 2.0, seed: 3 };
        let out = b.inpaint(&img, &mask, "a cat", &InjectionConfig::default(), &scfg).unwrap();
        assert_eq!(out.denoiser_calls, 14);
    }
}
