use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use crate::branch::{validate_scale, InjectionConfig, InjectionMode};
use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::instructor::EditPlan;
use crate::mask::{blur_mask, mask_out, paste_blend, BlurSpec, Mask};

/// Sampling and blending settings for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundParams {
    pub w: f64,
    #[serde(default)]
    pub mode: InjectionMode,
    pub blur_radius: usize,
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for RoundParams {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            w: 1.0,
            mode: InjectionMode::Full,
            blur_radius: BlurSpec::DEFAULT_RADIUS,
            steps: s.steps,
            guidance_scale: s.guidance_scale,
            seed: s.seed,
        }
    }
}

impl RoundParams {
    pub fn injection(&self) -> InjectionConfig {
        InjectionConfig { w: self.w, mode: self.mode }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_scale(self.w)?;
        self.sampler().validate()
    }
}

/// User replacements for agent-produced values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mask: Option<Mask>,
    pub caption: Option<String>,
    pub w: Option<f64>,
    pub blur_radius: Option<usize>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.mask.is_none() && self.caption.is_none() && self.w.is_none() && self.blur_radius.is_none()
    }
}

/// Plan and round parameters with overrides applied. Nothing is modified
/// when validation fails.
pub fn apply_overrides(
    plan: &EditPlan,
    params: &RoundParams,
    ov: &Overrides,
    image_dims: (usize, usize),
) -> Result<(EditPlan, RoundParams)> {
    if let Some(m) = &ov.mask {
        m.ensure_dims(image_dims, "override mask vs image")
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    if let Some(c) = &ov.caption {
        if c.trim().is_empty() {
            return Err(Error::Validation("override caption is empty".into()));
        }
    }
    if let Some(w) = ov.w {
        validate_scale(w)?;
    }
    let mut p = plan.clone();
    if let Some(m) = &ov.mask {
        p.mask = m.binarized();
    }
    if let Some(c) = &ov.caption {
        p.target_caption = c.trim().to_string();
    }
    let mut rp = *params;
    if let Some(w) = ov.w {
        rp.w = w;
    }
    if let Some(b) = ov.blur_radius {
        rp.blur_radius = b;
    }
    Ok((p, rp))
}

/// Output of one executed plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Blended, 8-bit quantized result.
    pub result: Image,
    /// Decoded sample before blending.
    pub raw: Image,
    pub blurred_mask: Mask,
    pub denoiser_calls: usize,
    pub timing_ms: f64,
}

/// Inpaint the plan's region of `current` and paste it back through the
/// blurred mask.
pub fn execute_plan(bundle: &ModelBundle, current: &Image, plan: &EditPlan, params: &RoundParams) -> Result<Execution> {
    params.validate()?;
    plan.validate_for(current)?;
    let start = Instant::now();
    let mask = plan.mask.binarized();
    let masked = mask_out(current, &mask)?;
    let out = bundle.inpaint(&masked, &mask, &plan.target_caption, &params.injection(), &params.sampler())?;
    let blurred = blur_mask(&mask, BlurSpec::new(params.blur_radius));
    let result = paste_blend(current, &out.image, &blurred)?.quantized();
    Ok(Execution {
        result,
        raw: out.image,
        blurred_mask: blurred,
        denoiser_calls: out.denoiser_calls,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
