//! The toy convolutional denoiser used as the frozen base model.
//!
//! Layout: an input convolution (timestep and caption projections added as
//! per-channel biases) followed by residual 3×3 blocks. The output of each of
//! those `n` layers is a feature map that the dual branch can add to.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{ConditionEmbedding, Denoiser};
use crate::error::{Error, Result};
use crate::nn::{silu, silu_grad, Conv2d, Linear, Parameters};
use crate::tensor::{LatentImage, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub hidden_channels: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 3,
            hidden_channels: 16,
            layers: 4,
            time_dim: 16,
            cond_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden_channels == 0 || self.layers == 0 {
            return Err(Error::Config(
                "latent_channels, hidden_channels and layers must be positive".into(),
            ));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("time_dim must be even".into()));
        }
        Ok(())
    }
}

/// Sinusoidal timestep features of length `dim`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for k in 0..half {
        let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out
}

/// Shared convolutional layer stack for both the base model and the branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Trunk {
    pub conv_in: Conv2d,
    pub time_proj: Linear,
    pub blocks: Vec<Conv2d>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct TrunkTape {
    pub input: Tensor3,
    pub temb: Vec<f64>,
    /// Pre-activation of each layer.
    pub pre: Vec<Tensor3>,
    /// Layer outputs after injection; what the next layer consumes.
    pub outputs: Vec<Tensor3>,
    /// Layer outputs before injection.
    pub features: Vec<Tensor3>,
}

pub(crate) struct TrunkGrads {
    /// `dL/d(layer output)` for every layer.
    pub layer_output: Vec<Tensor3>,
    /// Per-channel sum of the first layer's pre-activation gradient.
    pub first_bias: Vec<f64>,
}

/// Per-layer feature rewrite applied by the base model during a forward pass.
pub type LayerHook<'a> = dyn FnMut(usize, Tensor3) -> Result<Tensor3> + 'a;

impl Trunk {
    pub fn random<R: Rng + ?Sized>(in_channels: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let f = cfg.hidden_channels;
        Self {
            conv_in: Conv2d::random(in_channels, f, 3, 1.0, rng),
            time_proj: Linear::random(cfg.time_dim, f, 0.5, rng),
            blocks: (1..cfg.layers)
                .map(|_| Conv2d::random(f, f, 3, 0.5, rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv_in: Conv2d::zeros(self.conv_in.in_channels, self.conv_in.out_channels, 3),
            time_proj: Linear::zeros(self.time_proj.in_dim, self.time_proj.out_dim),
            blocks: self
                .blocks
                .iter()
                .map(|b| Conv2d::zeros(b.in_channels, b.out_channels, b.kernel))
                .collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.blocks.len() + 1
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.conv_in.weight,
            &self.conv_in.bias,
            &self.time_proj.weight,
            &self.time_proj.bias,
        ];
        for b in &self.blocks {
            v.push(&b.weight);
            v.push(&b.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.conv_in.weight,
            &mut self.conv_in.bias,
            &mut self.time_proj.weight,
            &mut self.time_proj.bias,
        ];
        for b in &mut self.blocks {
            v.push(&mut b.weight);
            v.push(&mut b.bias);
        }
        v
    }

    /// Forward pass; `extra_bias` is added per channel to the first layer and
    /// `hook` may rewrite each layer's output before the next layer sees it.
    pub fn forward(
        &self,
        input: &Tensor3,
        t: usize,
        extra_bias: Option<&[f64]>,
        mut hook: Option<&mut LayerHook<'_>>,
        keep_tape: bool,
    ) -> Result<(Tensor3, Option<TrunkTape>)> {
        let temb = timestep_embedding(t, self.time_proj.in_dim);
        let tbias = self.time_proj.forward(&temb)?;
        let mut a0 = self.conv_in.forward(input)?;
        for c in 0..a0.channels() {
            let b = tbias[c] + extra_bias.map_or(0.0, |e| e[c]);
            a0.plane_mut(c).iter_mut().for_each(|v| *v += b);
        }
        let mut pre = Vec::new();
        let mut outputs = Vec::new();
        let mut features = Vec::new();

        let h1 = a0.map(silu);
        let mut current = match hook.as_deref_mut() {
            Some(h) => h(1, h1.clone())?,
            None => h1.clone(),
        };
        if keep_tape {
            pre.push(a0);
            features.push(h1);
            outputs.push(current.clone());
        }
        for (k, block) in self.blocks.iter().enumerate() {
            let a = block.forward(&current)?;
            let h = current.zip_map(&a, |x, av| x + silu(av))?;
            let next = match hook.as_deref_mut() {
                Some(hk) => hk(k + 2, h.clone())?,
                None => h.clone(),
            };
            if keep_tape {
                pre.push(a);
                features.push(h);
                outputs.push(next.clone());
            }
            current = next;
        }
        let tape = keep_tape.then(|| TrunkTape {
            input: input.clone(),
            temb,
            pre,
            outputs,
            features,
        });
        Ok((current, tape))
    }

    /// Back-propagate. `seed[i]` holds the direct gradient on layer `i`'s
    /// output (index 0 is layer 1); later-layer contributions are added here.
    pub fn backward(
        &self,
        tape: &TrunkTape,
        mut seed: Vec<Tensor3>,
        grads: &mut Trunk,
    ) -> Result<TrunkGrads> {
        let n = self.layers();
        assert_eq!(seed.len(), n);
        let mut first_bias = vec![0.0; self.conv_in.out_channels];
        for i in (0..n).rev() {
            let g = seed[i].clone();
            let pre = &tape.pre[i];
            let g_pre = g.zip_map(pre, |gv, a| gv * silu_grad(a))?;
            if i == 0 {
                self.conv_in.backward(&tape.input, &g_pre, &mut grads.conv_in, false)?;
                for (c, fb) in first_bias.iter_mut().enumerate() {
                    *fb = g_pre.plane(c).iter().sum();
                }
                self.time_proj
                    .backward_params(&tape.temb, &first_bias, &mut grads.time_proj);
            } else {
                let block = &self.blocks[i - 1];
                let gin = block
                    .backward(&tape.outputs[i - 1], &g_pre, &mut grads.blocks[i - 1], true)?
                    .expect("input gradient requested");
                // residual path plus the convolution path
                seed[i - 1].add_scaled(&g, 1.0)?;
                seed[i - 1].add_scaled(&gin, 1.0)?;
            }
        }
        Ok(TrunkGrads {
            layer_output: seed,
            first_bias,
        })
    }
}

/// Frozen base denoiser: trunk over `C` latent channels, caption projection,
/// and an output convolution back to `C` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvDenoiser {
    config: ModelConfig,
    pub(crate) trunk: Trunk,
    pub(crate) cond_proj: Linear,
    pub(crate) conv_out: Conv2d,
}

/// Tape for a full base forward pass.
pub(crate) struct DenoiserTape {
    pub trunk: TrunkTape,
    pub cond: Vec<f64>,
}

impl ConvDenoiser {
    pub fn random<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            trunk: Trunk::random(config.latent_channels, &config, rng),
            cond_proj: Linear::random(config.cond_dim, config.hidden_channels, 1.0, rng),
            conv_out: Conv2d::random(config.hidden_channels, config.latent_channels, 3, 0.3, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            trunk: self.trunk.zeros_like(),
            cond_proj: Linear::zeros(self.cond_proj.in_dim, self.cond_proj.out_dim),
            conv_out: Conv2d::zeros(self.conv_out.in_channels, self.conv_out.out_channels, 3),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_inputs(&self, z: &LatentImage, cond: &ConditionEmbedding) -> Result<()> {
        if z.channels() != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {} channels, model expects {}",
                z.channels(),
                self.config.latent_channels
            )));
        }
        if cond.dim() != self.config.cond_dim {
            return Err(Error::Shape(format!(
                "condition embedding has dim {}, model expects {}",
                cond.dim(),
                self.config.cond_dim
            )));
        }
        Ok(())
    }

    /// Forward pass with an optional per-layer rewrite hook.
    pub fn predict_with(
        &self,
        z: &LatentImage,
        t: usize,
        cond: &ConditionEmbedding,
        hook: Option<&mut LayerHook<'_>>,
    ) -> Result<LatentImage> {
        self.check_inputs(z, cond)?;
        let cbias = self.cond_proj.forward(cond.as_slice())?;
        let (last, _) = self.trunk.forward(z, t, Some(&cbias), hook, false)?;
        self.conv_out.forward(&last)
    }

    pub(crate) fn forward_tape(
        &self,
        z: &LatentImage,
        t: usize,
        cond: &ConditionEmbedding,
        hook: Option<&mut LayerHook<'_>>,
    ) -> Result<(LatentImage, DenoiserTape)> {
        self.check_inputs(z, cond)?;
        let cbias = self.cond_proj.forward(cond.as_slice())?;
        let (last, tape) = self.trunk.forward(z, t, Some(&cbias), hook, true)?;
        let out = self.conv_out.forward(&last)?;
        Ok((
            out,
            DenoiserTape {
                trunk: tape.expect("tape requested"),
                cond: cond.0.clone(),
            },
        ))
    }

    /// Gradients of `dL/d(output)` into `grads`; returns `dL/d(layer output)`
    /// for every layer.
    pub(crate) fn backward(
        &self,
        tape: &DenoiserTape,
        grad_out: &LatentImage,
        grads: &mut ConvDenoiser,
    ) -> Result<Vec<Tensor3>> {
        let n = self.trunk.layers();
        let last = tape.trunk.outputs.last().expect("at least one layer");
        let g_last = self
            .conv_out
            .backward(last, grad_out, &mut grads.conv_out, true)?
            .expect("input gradient requested");
        let mut seed: Vec<Tensor3> = tape
            .trunk
            .outputs
            .iter()
            .map(|o| Tensor3::zeros(o.channels(), o.height(), o.width()))
            .collect();
        seed[n - 1] = g_last;
        let tg = self.trunk.backward(&tape.trunk, seed, &mut grads.trunk)?;
        self.cond_proj
            .backward_params(&tape.cond, &tg.first_bias, &mut grads.cond_proj);
        Ok(tg.layer_output)
    }

    /// Mean-squared ε-prediction loss on a fixed `(z_t, t, ε)` and its gradient.
    pub fn loss_and_grad(
        &self,
        z_t: &LatentImage,
        t: usize,
        eps: &LatentImage,
        cond: &ConditionEmbedding,
        grads: &mut ConvDenoiser,
    ) -> Result<f64> {
        let (pred, tape) = self.forward_tape(z_t, t, cond, None)?;
        let (loss, g) = mse_and_grad(&pred, eps)?;
        self.backward(&tape, &g, grads)?;
        Ok(loss)
    }
}

/// `mean((pred − target)²)` and its gradient with respect to `pred`.
pub(crate) fn mse_and_grad(pred: &LatentImage, target: &LatentImage) -> Result<(f64, LatentImage)> {
    let n = pred.len() as f64;
    let diff = pred.zip_map(target, |p, e| p - e)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

impl Parameters for ConvDenoiser {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.tensors();
        v.extend([
            &self.cond_proj.weight[..],
            &self.cond_proj.bias[..],
            &self.conv_out.weight[..],
            &self.conv_out.bias[..],
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.tensors_mut();
        v.extend([
            &mut self.cond_proj.weight[..],
            &mut self.cond_proj.bias[..],
            &mut self.conv_out.weight[..],
            &mut self.conv_out.bias[..],
        ]);
        v
    }
}

impl Denoiser for ConvDenoiser {
    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn predict(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<LatentImage> {
        self.predict_with(z_t, t, cond, None)
    }
}

/// A base denoiser that exposes its per-layer features for injection.
pub trait LayeredDenoiser: Denoiser {
    /// Number of injectable layers `n`.
    fn layer_count(&self) -> usize;

    /// Channel count of every layer feature map.
    fn feature_channels(&self) -> usize;

    /// Layer features `1..=n` for one forward pass without injection.
    fn layer_features(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<Vec<Tensor3>>;

    /// Forward pass where `hook(i, feature_i)` replaces layer `i`'s output.
    fn predict_hooked(
        &self,
        z_t: &LatentImage,
        t: usize,
        cond: &ConditionEmbedding,
        hook: &mut LayerHook<'_>,
    ) -> Result<LatentImage>;

    fn parameter_checksum(&self) -> String;
}

impl LayeredDenoiser for ConvDenoiser {
    fn layer_count(&self) -> usize {
        self.config.layers
    }

    fn feature_channels(&self) -> usize {
        self.config.hidden_channels
    }

    fn layer_features(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<Vec<Tensor3>> {
        let mut feats = Vec::with_capacity(self.config.layers);
        let mut grab = |_: usize, f: Tensor3| -> Result<Tensor3> {
            feats.push(f.clone());
            Ok(f)
        };
        self.predict_with(z_t, t, cond, Some(&mut grab))?;
        Ok(feats)
    }

    fn predict_hooked(
        &self,
        z_t: &LatentImage,
        t: usize,
        cond: &ConditionEmbedding,
        hook: &mut LayerHook<'_>,
    ) -> Result<LatentImage> {
        self.predict_with(z_t, t, cond, Some(hook))
    }

    fn parameter_checksum(&self) -> String {
        self.checksum()
    }
}

impl<D: LayeredDenoiser + ?Sized> LayeredDenoiser for &D {
    fn layer_count(&self) -> usize {
        (**self).layer_count()
    }

    fn feature_channels(&self) -> usize {
        (**self).feature_channels()
    }

    fn layer_features(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<Vec<Tensor3>> {
        (**self).layer_features(z_t, t, cond)
    }

    fn predict_hooked(
        &self,
        z_t: &LatentImage,
        t: usize,
        cond: &ConditionEmbedding,
        hook: &mut LayerHook<'_>,
    ) -> Result<LatentImage> {
        (**self).predict_hooked(z_t, t, cond, hook)
    }

    fn parameter_checksum(&self) -> String {
        (**self).parameter_checksum()
    }
}

/// Wraps a denoiser and counts every forward evaluation.
pub struct CountingDenoiser<D> {
    inner: D,
    calls: std::sync::atomic::AtomicUsize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: std::sync::atomic::AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::Relaxed)
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }

    fn bump(&self) {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn latent_channels(&self) -> usize {
        self.inner.latent_channels()
    }

    fn predict(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<LatentImage> {
        self.bump();
        self.inner.predict(z_t, t, cond)
    }
}

impl<D: LayeredDenoiser> LayeredDenoiser for CountingDenoiser<D> {
    fn layer_count(&self) -> usize {
        self.inner.layer_count()
    }

    fn feature_channels(&self) -> usize {
        self.inner.feature_channels()
    }

    fn layer_features(&self, z_t: &LatentImage, t: usize, cond: &ConditionEmbedding) -> Result<Vec<Tensor3>> {
        self.inner.layer_features(z_t, t, cond)
    }

    fn predict_hooked(
        &self,
        z_t: &LatentImage,
        t: usize,
        cond: &ConditionEmbedding,
        hook: &mut LayerHook<'_>,
    ) -> Result<LatentImage> {
        self.bump();
        self.inner.predict_hooked(z_t, t, cond, hook)
    }

    fn parameter_checksum(&self) -> String {
        self.inner.parameter_checksum()
    }
}
