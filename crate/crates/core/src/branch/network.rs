use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::{ConvDenoiser, LayeredDenoiser, ModelConfig, Trunk, TrunkTape};
use crate::nn::{Conv2d, Parameters};
use crate::tensor::{LatentImage, Tensor3};

/// Channel concatenation `[z_t ‖ z0_masked ‖ m_resized]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchInput(Tensor3);

impl BranchInput {
    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn latent_channels(&self) -> usize {
        (self.0.channels() - 1) / 2
    }

    /// The trailing mask channel.
    pub fn mask_channel(&self) -> &[f64] {
        self.0.plane(self.0.channels() - 1)
    }
}

pub fn assemble_branch_input(
    z_t: &LatentImage,
    z0_masked: &LatentImage,
    m_resized: &Mask,
) -> Result<BranchInput> {
    z_t.ensure_same_shape(z0_masked, "noisy latent vs masked-image latent")?;
    m_resized.ensure_dims((z_t.height(), z_t.width()), "branch mask")?;
    let m = m_resized.to_tensor();
    Ok(BranchInput(Tensor3::concat_channels(&[z_t, z0_masked, &m])?))
}

/// One zero-initialized 1×1 convolution per layer linking branch features
/// into the base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroLinks(pub(crate) Vec<Conv2d>);

impl ZeroLinks {
    pub fn zeros(layers: usize, channels: usize) -> Self {
        Self((0..layers).map(|_| Conv2d::zeros(channels, channels, 1)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Link for layer `index` (1-based).
    pub fn get(&self, index: usize) -> Result<&Conv2d> {
        if index == 0 || index > self.0.len() {
            return Err(Error::Index {
                index,
                layers: self.0.len(),
            });
        }
        Ok(&self.0[index - 1])
    }

    pub fn get_mut(&mut self, index: usize) -> Result<&mut Conv2d> {
        let layers = self.0.len();
        self.0
            .get_mut(index.wrapping_sub(1))
            .ok_or(Error::Index { index, layers })
    }

    pub fn apply(&self, index: usize, feature: &Tensor3) -> Result<Tensor3> {
        self.get(index)?.forward(feature)
    }

    pub fn is_zero(&self) -> bool {
        self.0
            .iter()
            .all(|c| c.weight.iter().chain(&c.bias).all(|&v| v == 0.0))
    }
}

/// `base_feature + w · link_i(branch_feature)`.
pub fn inject(
    base_feature: &Tensor3,
    branch_feature: &Tensor3,
    links: &ZeroLinks,
    index: usize,
    w: f64,
) -> Result<Tensor3> {
    let link = links.get(index)?;
    if w == 0.0 {
        return Ok(base_feature.clone());
    }
    let linked = link.forward(branch_feature)?;
    let mut out = base_feature.clone();
    out.add_scaled(&linked, w)?;
    Ok(out)
}

/// Shape signature used to check branch/base compatibility and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSignature {
    pub latent_channels: usize,
    pub layers: usize,
    pub feature_channels: usize,
    pub input_channels: usize,
    pub time_dim: usize,
    /// `(in, out)` channels of every layer.
    pub layer_shapes: Vec<(usize, usize)>,
}

/// Attention-free copy of the base layer stack over `2C+1` input channels,
/// without any caption pathway, plus its zero links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchNetwork {
    config: ModelConfig,
    pub(crate) trunk: Trunk,
    pub(crate) links: ZeroLinks,
}

impl BranchNetwork {
    /// Copy the base model's convolution weights. The extra masked-image and
    /// mask input channels start at zero; links start at zero.
    pub fn from_base(base: &ConvDenoiser) -> Self {
        let config = *base.config();
        let c = config.latent_channels;
        let f = config.hidden_channels;
        let src = &base.trunk;
        let mut conv_in = Conv2d::zeros(2 * c + 1, f, 3);
        for o in 0..f {
            for i in 0..c {
                for k in 0..9 {
                    conv_in.weight[(o * (2 * c + 1) + i) * 9 + k] = src.conv_in.weight[(o * c + i) * 9 + k];
                }
            }
        }
        conv_in.bias = src.conv_in.bias.clone();
        Self {
            config,
            trunk: Trunk {
                conv_in,
                time_proj: src.time_proj.clone(),
                blocks: src.blocks.clone(),
            },
            links: ZeroLinks::zeros(config.layers, f),
        }
    }

    pub fn random<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            trunk: Trunk::random(2 * config.latent_channels + 1, &config, rng),
            links: ZeroLinks::zeros(config.layers, config.hidden_channels),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            trunk: self.trunk.zeros_like(),
            links: ZeroLinks::zeros(self.links.len(), self.config.hidden_channels),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layer_count(&self) -> usize {
        self.trunk.layers()
    }

    pub fn links(&self) -> &ZeroLinks {
        &self.links
    }

    pub fn links_mut(&mut self) -> &mut ZeroLinks {
        &mut self.links
    }

    pub fn signature(&self) -> BranchSignature {
        let mut layer_shapes = vec![(self.trunk.conv_in.in_channels, self.trunk.conv_in.out_channels)];
        layer_shapes.extend(self.trunk.blocks.iter().map(|b| (b.in_channels, b.out_channels)));
        BranchSignature {
            latent_channels: self.config.latent_channels,
            layers: self.layer_count(),
            feature_channels: self.config.hidden_channels,
            input_channels: self.trunk.conv_in.in_channels,
            time_dim: self.trunk.time_proj.in_dim,
            layer_shapes,
        }
    }

    /// Check that `base` can host this branch: same latent channels, layer
    /// count and feature width.
    pub fn ensure_compatible<B: LayeredDenoiser + ?Sized>(&self, base: &B) -> Result<()> {
        if base.latent_channels() != self.config.latent_channels
            || base.layer_count() != self.layer_count()
            || base.feature_channels() != self.config.hidden_channels
        {
            return Err(Error::Model(format!(
                "branch (C={}, n={}, F={}) incompatible with base (C={}, n={}, F={})",
                self.config.latent_channels,
                self.layer_count(),
                self.config.hidden_channels,
                base.latent_channels(),
                base.layer_count(),
                base.feature_channels()
            )));
        }
        Ok(())
    }

    fn check_input(&self, input: &BranchInput) -> Result<()> {
        if input.tensor().channels() != 2 * self.config.latent_channels + 1 {
            return Err(Error::Shape(format!(
                "branch expects {} input channels, got {}",
                2 * self.config.latent_channels + 1,
                input.tensor().channels()
            )));
        }
        Ok(())
    }

    /// Per-layer branch features for one timestep.
    pub fn features(&self, input: &BranchInput, t: usize) -> Result<Vec<Tensor3>> {
        self.check_input(input)?;
        let mut feats = Vec::with_capacity(self.layer_count());
        let mut grab = |_: usize, f: Tensor3| -> Result<Tensor3> {
            feats.push(f.clone());
            Ok(f)
        };
        self.trunk.forward(input.tensor(), t, None, Some(&mut grab), false)?;
        Ok(feats)
    }

    pub(crate) fn features_tape(&self, input: &BranchInput, t: usize) -> Result<TrunkTape> {
        self.check_input(input)?;
        let (_, tape) = self.trunk.forward(input.tensor(), t, None, None, true)?;
        Ok(tape.expect("tape requested"))
    }
}

impl Parameters for BranchNetwork {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.tensors();
        for l in &self.links.0 {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.tensors_mut();
        for l in &mut self.links.0 {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }
}
