use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{assemble_branch_input, inject, BranchNetwork};
use crate::conductor::LatentCodec;
use crate::diffusion::{
    forward_noise, sample, ConditionEmbedding, Conditioning, Denoiser, NoiseSchedule, SamplerConfig,
    StepInfo, TextEmbedder,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{downsample_mask, latent_blend, BlendPolarity, Mask};
use crate::model::{mse_and_grad, ConvDenoiser, LayeredDenoiser};
use crate::tensor::{LatentImage, Tensor3};

/// Which base layers receive branch features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Every layer `1..=n`.
    #[default]
    Full,
    /// Only the first `ceil(n/2)` layers.
    Half,
    /// Only the later layers `i > n/2`, mirroring encoder-to-decoder control.
    ControlNet,
}

impl InjectionMode {
    pub fn includes(&self, index: usize, layers: usize) -> bool {
        match self {
            InjectionMode::Full => true,
            InjectionMode::Half => index <= layers.div_ceil(2),
            InjectionMode::ControlNet => index > layers / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    /// Preservation scale `w` in `[0, 1]`.
    pub w: f64,
    #[serde(default)]
    pub mode: InjectionMode,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            w: 1.0,
            mode: InjectionMode::Full,
        }
    }
}

impl InjectionConfig {
    pub fn new(w: f64) -> Result<Self> {
        let cfg = Self { w, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_scale(self.w)
    }
}

pub fn validate_scale(w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Validation(format!(
            "preservation scale w must lie in [0, 1], got {w}"
        )));
    }
    Ok(())
}

/// Base denoiser whose layers receive branch features computed from the
/// masked-image latent and mask.
pub struct DualBranchDenoiser<'a, B: LayeredDenoiser> {
    base: B,
    branch: &'a BranchNetwork,
    z0_masked: LatentImage,
    m_resized: Mask,
    icfg: InjectionConfig,
}

impl<'a, B: LayeredDenoiser> DualBranchDenoiser<'a, B> {
    pub fn new(
        base: B,
        branch: &'a BranchNetwork,
        z0_masked: LatentImage,
        m_resized: Mask,
        icfg: InjectionConfig,
    ) -> Result<Self> {
        icfg.validate()?;
        branch.ensure_compatible(&base)?;
        m_resized.ensure_dims((z0_masked.height(), z0_masked.width()), "resized mask vs latent")?;
        Ok(Self {
            base,
            branch,
            z0_masked,
            m_resized,
            icfg,
        })
    }

    pub fn base(&self) -> &B {
        &self.base
    }
}

impl<B: LayeredDenoiser> Denoiser for DualBranchDenoiser<'_, B> {
    fn latent_channels(&self) -> usize {
        self.base.latent_channels()
    }

    fn predict(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<LatentImage> {
        if self.icfg.w == 0.0 {
            return self.base.predict(z_t, t, cond);
        }
        let input = assemble_branch_input(z_t, &self.z0_masked, &self.m_resized)?;
        let feats = self.branch.features(&input, t)?;
        let n = self.branch.layer_count();
        let (links, w, mode) = (self.branch.links(), self.icfg.w, self.icfg.mode);
        let mut hook = |i: usize, f: Tensor3| -> Result<Tensor3> {
            if mode.includes(i, n) {
                inject(&f, &feats[i - 1], links, i, w)
            } else {
                Ok(f)
            }
        };
        self.base.predict_hooked(z_t, t, cond, &mut hook)
    }
}

/// Shared pieces every sampling entry point needs.
#[derive(Clone, Copy)]
pub struct DiffusionContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub embedder: &'a dyn TextEmbedder,
    pub codec: &'a dyn LatentCodec,
}

fn latent_dims(ctx: &DiffusionContext<'_>, height: usize, width: usize) -> Result<(usize, usize)> {
    let f = ctx.codec.downscale();
    if f == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
        return Err(Error::Shape(format!(
            "image {height}x{width} not divisible by codec factor {f}"
        )));
    }
    Ok((height / f, width / f))
}

/// Plain text-conditioned sampling with the base model alone.
pub fn base_sample<D: Denoiser + ?Sized>(
    base: &D,
    ctx: &DiffusionContext<'_>,
    height: usize,
    width: usize,
    caption: &str,
    scfg: &SamplerConfig,
) -> Result<Image> {
    let (lh, lw) = latent_dims(ctx, height, width)?;
    let z_t = scfg.initial_noise(base.latent_channels(), lh, lw);
    let cond = Conditioning::from_caption(ctx.embedder, caption);
    let z0 = sample(&base, ctx.schedule, z_t, &cond, scfg, None)?;
    ctx.codec.decode(&z0)
}

/// Dual-branch inpainting. Returns the decoded sample before any pixel-space
/// blending.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_sample<B: LayeredDenoiser>(
    base: B,
    branch: &BranchNetwork,
    ctx: &DiffusionContext<'_>,
    masked_image: &Image,
    mask: &Mask,
    caption: &str,
    icfg: &InjectionConfig,
    scfg: &SamplerConfig,
) -> Result<Image> {
    mask.ensure_dims(masked_image.dims(), "inpaint mask vs image")?;
    let z0_masked = ctx.codec.encode(masked_image)?;
    let m_resized = downsample_mask(mask, z0_masked.height(), z0_masked.width())?;
    let z_t = scfg.initial_noise(base.latent_channels(), z0_masked.height(), z0_masked.width());
    let dual = DualBranchDenoiser::new(base, branch, z0_masked, m_resized, *icfg)?;
    let cond = Conditioning::from_caption(ctx.embedder, caption);
    let z0 = sample(&dual, ctx.schedule, z_t, &cond, scfg, None)?;
    ctx.codec.decode(&z0)
}

/// Blended-latent baseline: after every step the known region of the latent is
/// replaced with the masked-image latent noised to the same level.
pub fn blended_latent_inpaint<D: Denoiser + ?Sized>(
    base: &D,
    ctx: &DiffusionContext<'_>,
    image: &Image,
    mask: &Mask,
    caption: &str,
    scfg: &SamplerConfig,
    polarity: BlendPolarity,
) -> Result<Image> {
    mask.ensure_dims(image.dims(), "inpaint mask vs image")?;
    let z0_known = ctx.codec.encode(image)?;
    let (c, h, w) = z0_known.shape();
    let m_resized = downsample_mask(mask, h, w)?;
    let z_t = scfg.initial_noise(base.latent_channels(), h, w);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut hook = |info: &StepInfo, z: &mut LatentImage| -> Result<()> {
        let eps = LatentImage::randn(c, h, w, &mut noise_rng);
        let known = forward_noise(&z0_known, &eps, info.t_prev, ctx.schedule)?;
        *z = latent_blend(z, &known, &m_resized, polarity)?;
        Ok(())
    };
    let cond = Conditioning::from_caption(ctx.embedder, caption);
    let z0 = sample(&base, ctx.schedule, z_t, &cond, scfg, Some(&mut hook))?;
    ctx.codec.decode(&z0)
}

/// ε-prediction loss of the injected system on a fixed `(z_t, t, ε)`, with
/// gradients accumulated into `grads` for the branch only. The base model is
/// borrowed immutably.
#[allow(clippy::too_many_arguments)]
pub fn branch_loss_and_grad(
    base: &ConvDenoiser,
    branch: &BranchNetwork,
    z_t: &LatentImage,
    t: usize,
    eps: &LatentImage,
    cond: &ConditionEmbedding,
    z0_masked: &LatentImage,
    m_resized: &Mask,
    icfg: &InjectionConfig,
    grads: &mut BranchNetwork,
) -> Result<f64> {
    branch.ensure_compatible(base)?;
    let n = branch.layer_count();
    let input = assemble_branch_input(z_t, z0_masked, m_resized)?;
    let btape = branch.features_tape(&input, t)?;
    let mut linked = Vec::with_capacity(n);
    for i in 1..=n {
        linked.push(branch.links.apply(i, &btape.features[i - 1])?);
    }
    let (w, mode) = (icfg.w, icfg.mode);
    let mut hook = |i: usize, f: Tensor3| -> Result<Tensor3> {
        if w != 0.0 && mode.includes(i, n) {
            let mut out = f;
            out.add_scaled(&linked[i - 1], w)?;
            Ok(out)
        } else {
            Ok(f)
        }
    };
    let (pred, tape) = base.forward_tape(z_t, t, cond, Some(&mut hook))?;
    let (loss, g_out) = mse_and_grad(&pred, eps)?;
    let mut scratch = base.zeros_like();
    let g_layers = base.backward(&tape, &g_out, &mut scratch)?;

    let mut seed = Vec::with_capacity(n);
    for i in 1..=n {
        let feat = &btape.features[i - 1];
        if w != 0.0 && mode.includes(i, n) {
            let g_link = g_layers[i - 1].map(|v| v * w);
            let g_feat = branch.links.get(i)?
                .backward(feat, &g_link, grads.links.get_mut(i)?, true)?
                .expect("input gradient requested");
            seed.push(g_feat);
        } else {
            seed.push(Tensor3::zeros(feat.channels(), feat.height(), feat.width()));
        }
    }
    branch.trunk.backward(&btape, seed, &mut grads.trunk)?;
    Ok(loss)
}
