//! Desk-scale training: procedural scenes, mixed-mask training pairs, base
//! pre-training and branch training against a frozen base.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::branch::{base_sample, branch_loss_and_grad, BranchNetwork, InjectionConfig};
use crate::conductor::{BundleConfig, ModelBundle};
use crate::diffusion::{draw_training_sample, ConditionEmbedding, SamplerConfig, TextEmbedder};
use crate::error::{Error, Result};
use crate::evaluation::mse;
use crate::image::Image;
use crate::mask::{downsample_mask, filter_mask, mask_out, random_brush_mask, BrushParams, Mask};
use crate::nn::{Optimizer, OptimizerConfig, Parameters};
use crate::scene::{random_scene, ProceduralScene, SceneGraph, SceneParams};

/// `n` random scenes.
pub fn synth_dataset<R: Rng + ?Sized>(rng: &mut R, n: usize, params: &SceneParams) -> Result<Vec<ProceduralScene>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    (0..n).map(|_| random_scene(rng, params)).collect()
}

/// Write `scene-NNNNN.png` and `scene-NNNNN.json` (the scene graph) per scene.
pub fn save_dataset(dir: &Path, scenes: &[ProceduralScene]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in scenes.iter().enumerate() {
        s.image.save_png(dir.join(format!("scene-{i:05}.png")))?;
        fs::write(dir.join(format!("scene-{i:05}.json")), serde_json::to_vec_pretty(&s.graph)?)?;
    }
    Ok(())
}

/// Read a cached dataset back. Scenes are re-rendered from their graphs and
/// checked against the stored PNGs.
pub fn load_dataset(dir: &Path) -> Result<Vec<ProceduralScene>> {
    let mut graphs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::load(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    graphs.sort();
    if graphs.is_empty() {
        return Err(Error::load(dir, "no scene graphs found"));
    }
    graphs
        .iter()
        .map(|gp| {
            let bytes = fs::read(gp).map_err(|e| Error::load(gp, e))?;
            let graph: SceneGraph = serde_json::from_slice(&bytes).map_err(|e| Error::load(gp, e))?;
            let scene = ProceduralScene::from_graph(graph)?;
            let png = gp.with_extension("png");
            if Image::load_png(&png)? != scene.image.quantized() {
                return Err(Error::load(png, "image does not match its scene graph"));
            }
            Ok(scene)
        })
        .collect()
}

/// Load the cached dataset at `dir` if present, otherwise generate and cache it.
pub fn cached_dataset(dir: &Path, seed: u64, n: usize, params: &SceneParams) -> Result<Vec<ProceduralScene>> {
    if dir.is_dir() {
        let scenes = load_dataset(dir)?;
        if scenes.len() == n {
            return Ok(scenes);
        }
        log::warn!("cached dataset at {} has {} scenes, regenerating {n}", dir.display(), scenes.len());
    }
    let scenes = synth_dataset(&mut ChaCha8Rng::seed_from_u64(seed), n, params)?;
    save_dataset(dir, &scenes)?;
    Ok(scenes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    RandomBrush,
    SegmentationLike,
    /// Clean background target with an object's mask.
    DeletionPair,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::RandomBrush, MaskKind::SegmentationLike, MaskKind::DeletionPair];
}

/// Sampling weights over mask kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskMix {
    pub random_brush: f64,
    pub segmentation_like: f64,
    pub deletion_pair: f64,
}

impl Default for MaskMix {
    fn default() -> Self {
        Self {
            random_brush: 0.4,
            segmentation_like: 0.4,
            deletion_pair: 0.2,
        }
    }
}

impl MaskMix {
    pub fn only(kind: MaskKind) -> Self {
        let mut m = Self {
            random_brush: 0.0,
            segmentation_like: 0.0,
            deletion_pair: 0.0,
        };
        *m.weight_mut(kind) = 1.0;
        m
    }

    pub fn weight(&self, kind: MaskKind) -> f64 {
        match kind {
            MaskKind::RandomBrush => self.random_brush,
            MaskKind::SegmentationLike => self.segmentation_like,
            MaskKind::DeletionPair => self.deletion_pair,
        }
    }

    fn weight_mut(&mut self, kind: MaskKind) -> &mut f64 {
        match kind {
            MaskKind::RandomBrush => &mut self.random_brush,
            MaskKind::SegmentationLike => &mut self.segmentation_like,
            MaskKind::DeletionPair => &mut self.deletion_pair,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = MaskKind::ALL.map(|k| self.weight(k));
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("mask mix weights must be >= 0, got {ws:?}")));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mask mix weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MaskKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for k in MaskKind::ALL {
            acc += self.weight(k);
            if u < acc {
                return k;
            }
        }
        // rounding slack: last kind with positive weight
        *MaskKind::ALL.iter().rev().find(|k| self.weight(**k) > 0.0).unwrap_or(&MaskKind::RandomBrush)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Ground-truth target.
    pub image: Image,
    pub masked_image: Image,
    pub mask: Mask,
    pub caption_target: String,
    pub mask_kind: MaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairParams {
    pub brush: BrushParams,
    pub min_area_frac: f64,
    pub max_resample: usize,
}

impl Default for PairParams {
    fn default() -> Self {
        Self {
            brush: BrushParams::default(),
            min_area_frac: 0.02,
            max_resample: 32,
        }
    }
}

pub fn make_training_pair<R: Rng + ?Sized>(scene: &ProceduralScene, rng: &mut R, mix: &MaskMix) -> Result<TrainingPair> {
    make_training_pair_with(scene, rng, mix, &PairParams::default())
}

/// Draw a mask kind from `mix`, build the mask, and rejection-resample until
/// it passes `filter_mask`.
pub fn make_training_pair_with<R: Rng + ?Sized>(
    scene: &ProceduralScene,
    rng: &mut R,
    mix: &MaskMix,
    params: &PairParams,
) -> Result<TrainingPair> {
    mix.validate()?;
    let (h, w) = scene.image.dims();
    let kind = mix.sample(rng);
    let n_obj = scene.graph.objects.len();
    for _ in 0..params.max_resample {
        let (image, mask, caption, connected) = match kind {
            MaskKind::RandomBrush => (
                scene.image.clone(),
                random_brush_mask(rng, h, w, &params.brush)?,
                scene.caption.clone(),
                false,
            ),
            MaskKind::SegmentationLike | MaskKind::DeletionPair if n_obj == 0 => {
                return Err(Error::Generation("scene has no objects to mask".into()));
            }
            MaskKind::SegmentationLike => (
                scene.image.clone(),
                scene.graph.object_mask(rng.random_range(0..n_obj))?,
                scene.caption.clone(),
                true,
            ),
            MaskKind::DeletionPair => {
                let bg = SceneGraph {
                    objects: Vec::new(),
                    ..scene.graph.clone()
                };
                (
                    bg.render(),
                    scene.graph.object_mask(rng.random_range(0..n_obj))?,
                    bg.caption(),
                    true,
                )
            }
        };
        if filter_mask(&mask, params.min_area_frac, connected)? {
            return Ok(TrainingPair {
                masked_image: mask_out(&image, &mask)?,
                image,
                mask,
                caption_target: caption,
                mask_kind: kind,
            });
        }
    }
    Err(Error::Generation(format!(
        "no {kind:?} mask passed the filter after {} draws",
        params.max_resample
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub mask_mix: MaskMix,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Probability of training on the empty caption.
    #[serde(default = "default_dropout")]
    pub caption_dropout: f64,
    /// Worker threads per batch. Results do not depend on it.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_dropout() -> f64 {
    0.1
}

fn default_jobs() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 8,
            learning_rate: 0.05,
            seed: 0,
            mask_mix: MaskMix::default(),
            optimizer: OptimizerKind::Sgd,
            caption_dropout: default_dropout(),
            jobs: default_jobs(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.caption_dropout) {
            return Err(Error::Config("caption_dropout must be in [0, 1]".into()));
        }
        self.mask_mix.validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::Sgd {
                learning_rate: self.learning_rate,
            },
            OptimizerKind::Adam => OptimizerConfig::adam(self.learning_rate),
        }
    }

    /// Independent stream for sample `index` of `step`, so batches are
    /// identical however they are split across threads.
    fn sample_rng(&self, step: usize, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((step * self.batch + index) as u64 + 1);
        rng
    }
}

/// Per-step mean batch loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    /// Centered moving average over `window` steps, truncated at the ends.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let n = self.losses.len();
        let half = window / 2;
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(n);
                self.losses[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{i},{l}");
        }
        out
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn embed_caption<R: Rng + ?Sized>(embedder: &dyn TextEmbedder, caption: &str, dropout: f64, rng: &mut R) -> ConditionEmbedding {
    if rng.random::<f64>() < dropout {
        embedder.embed("")
    } else {
        embedder.embed(caption)
    }
}

/// Evaluate `f` for every sample of one batch, in index order, over up to
/// `jobs` threads.
fn batch_map<T: Send>(batch: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, batch);
    if jobs == 1 {
        return (0..batch).map(&f).collect();
    }
    let size = batch.div_ceil(jobs);
    let f = &f;
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..batch)
            .step_by(size)
            .map(|start| scope.spawn(move || (start..(start + size).min(batch)).map(f).collect::<Result<Vec<T>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(batch);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Sum per-sample gradients in index order and average.
fn reduce<P: Parameters>(mut total: P, parts: Vec<(f64, P)>) -> (f64, P) {
    let n = parts.len() as f64;
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    total.scale(1.0 / n);
    (loss / n, total)
}

fn check_finite(step: usize, loss: f64, grads: &dyn Parameters) -> Result<()> {
    let gn = grads.grad_norm();
    if !loss.is_finite() || !gn.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("loss {loss}, gradient norm {gn}"),
        });
    }
    Ok(())
}

/// ε-prediction training of the base denoiser on full scenes.
pub fn pretrain_base(bundle: &mut ModelBundle, data: &[ProceduralScene], cfg: &TrainConfig) -> Result<LossCurve> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer_config());
    let mut curve = LossCurve::default();
    for step in 0..cfg.steps {
        let (base, sched, embedder, codec) = (&bundle.base, &bundle.schedule, &bundle.embedder, bundle.codec());
        let parts = batch_map(cfg.batch, cfg.jobs, |i| {
            let mut rng = cfg.sample_rng(step, i);
            let scene = &data[rng.random_range(0..data.len())];
            let z0 = codec.encode(&scene.image)?;
            let s = draw_training_sample(sched, &z0, &mut rng)?;
            let cond = embed_caption(embedder, &scene.caption, cfg.caption_dropout, &mut rng);
            let mut g = base.zeros_like();
            let loss = base.loss_and_grad(&s.z_t, s.t, &s.eps, &cond, &mut g)?;
            Ok((loss, g))
        })?;
        let (loss, grads) = reduce(bundle.base.zeros_like(), parts);
        check_finite(step, loss, &grads)?;
        opt.step(&mut bundle.base, &grads);
        curve.losses.push(loss);
        if step % 50 == 0 {
            log::debug!("base step {step}: loss {loss:.5}");
        }
    }
    Ok(curve)
}

/// Branch training outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTraining {
    pub curve: LossCurve,
    pub base_checksum: String,
}

/// Optimise only the branch (trunk and links) on mixed-mask pairs, with the
/// loss taken through the injected base. Fails if the base changed.
pub fn train_branch(bundle: &mut ModelBundle, data: &[ProceduralScene], cfg: &TrainConfig) -> Result<BranchTraining> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let before = bundle.base.checksum();
    let icfg = InjectionConfig::default();
    let mut opt = Optimizer::new(cfg.optimizer_config());
    let mut curve = LossCurve::default();
    for step in 0..cfg.steps {
        let (base, branch) = (&bundle.base, &bundle.branch);
        let (sched, embedder, codec) = (&bundle.schedule, &bundle.embedder, bundle.codec());
        let parts = batch_map(cfg.batch, cfg.jobs, |i| {
            let mut rng = cfg.sample_rng(step, i);
            let scene = &data[rng.random_range(0..data.len())];
            let pair = make_training_pair(scene, &mut rng, &cfg.mask_mix)?;
            let z0 = codec.encode(&pair.image)?;
            let z0_masked = codec.encode(&pair.masked_image)?;
            let m = downsample_mask(&pair.mask, z0.height(), z0.width())?;
            let s = draw_training_sample(sched, &z0, &mut rng)?;
            let cond = embed_caption(embedder, &pair.caption_target, cfg.caption_dropout, &mut rng);
            let mut g = branch.zeros_like();
            let loss = branch_loss_and_grad(base, branch, &s.z_t, s.t, &s.eps, &cond, &z0_masked, &m, &icfg, &mut g)?;
            Ok((loss, g))
        })?;
        let (loss, grads) = reduce(bundle.branch.zeros_like(), parts);
        check_finite(step, loss, &grads)?;
        opt.step(&mut bundle.branch, &grads);
        curve.losses.push(loss);
        if step % 50 == 0 {
            log::debug!("branch step {step}: loss {loss:.5}");
        }
    }
    let after = bundle.base.checksum();
    if after != before {
        return Err(Error::Model("base parameters changed during branch training".into()));
    }
    Ok(BranchTraining {
        curve,
        base_checksum: after,
    })
}

/// Held-out pairs from a fresh seed.
pub fn held_out_pairs(seed: u64, n: usize, params: &SceneParams, mix: &MaskMix) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = synth_dataset(&mut rng, n, params)?;
    scenes.iter().map(|s| make_training_pair(s, &mut rng, mix)).collect()
}

/// Mean unmasked-region MSE against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    /// Raw dual-branch sample, no blending.
    pub branch_mse: f64,
    /// Base-only sample for the same caption and seed.
    pub base_mse: f64,
    pub n: usize,
}

pub fn held_out_unmasked_mse(bundle: &ModelBundle, pairs: &[TrainingPair], scfg: &SamplerConfig) -> Result<HeldOutReport> {
    if pairs.is_empty() {
        return Err(Error::Config("no held-out pairs".into()));
    }
    let icfg = InjectionConfig::default();
    let ctx = bundle.context();
    let (mut branch_mse, mut base_mse) = (0.0, 0.0);
    for (i, p) in pairs.iter().enumerate() {
        let s = SamplerConfig {
            seed: scfg.seed.wrapping_add(i as u64),
            ..*scfg
        };
        let raw = bundle.inpaint(&p.masked_image, &p.mask, &p.caption_target, &icfg, &s)?.image;
        branch_mse += mse(&raw, &p.image, Some(&p.mask))?;
        let (h, w) = p.image.dims();
        let base = base_sample(&bundle.base, &ctx, h, w, &p.caption_target, &s)?;
        base_mse += mse(&base, &p.image, Some(&p.mask))?;
    }
    let n = pairs.len();
    Ok(HeldOutReport {
        branch_mse: branch_mse / n as f64,
        base_mse: base_mse / n as f64,
        n,
    })
}

/// Everything `train` needs: architecture, data and both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    #[serde(default)]
    pub bundle: BundleConfig,
    #[serde(default)]
    pub scenes: SceneParams,
    pub dataset_size: usize,
    pub base: TrainConfig,
    pub branch: TrainConfig,
    /// Directory for the PNG + JSON dataset cache.
    #[serde(default)]
    pub dataset_cache: Option<PathBuf>,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            bundle: BundleConfig::default(),
            scenes: SceneParams::default(),
            dataset_size: 256,
            base: TrainConfig {
                steps: 300,
                learning_rate: 0.002,
                optimizer: OptimizerKind::Adam,
                ..TrainConfig::default()
            },
            branch: TrainConfig {
                steps: 300,
                learning_rate: 0.002,
                optimizer: OptimizerKind::Adam,
                ..TrainConfig::default()
            },
            dataset_cache: None,
        }
    }
}

impl TrainRecipe {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::load(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::load(path, e))
    }
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub base_curve: LossCurve,
    pub branch: BranchTraining,
}

/// Generate (or load) data, pre-train the base, then train the branch
/// copied from it.
pub fn run_recipe(recipe: &TrainRecipe) -> Result<TrainOutcome> {
    recipe.base.validate()?;
    recipe.branch.validate()?;
    let data = match &recipe.dataset_cache {
        Some(dir) => cached_dataset(dir, recipe.base.seed, recipe.dataset_size, &recipe.scenes)?,
        None => synth_dataset(
            &mut ChaCha8Rng::seed_from_u64(recipe.base.seed),
            recipe.dataset_size,
            &recipe.scenes,
        )?,
    };
    let mut bundle = ModelBundle::untrained(recipe.bundle, recipe.base.seed)?;
    let base_curve = pretrain_base(&mut bundle, &data, &recipe.base)?;
    bundle.branch = BranchNetwork::from_base(&bundle.base);
    let branch = train_branch(&mut bundle, &data, &recipe.branch)?;
    Ok(TrainOutcome {
        bundle,
        base_curve,
        branch,
    })
}

/// Save the bundle plus `base_loss.csv` and `branch_loss.csv` into `dir`.
pub fn save_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    outcome.bundle.save(dir)?;
    fs::write(dir.join("base_loss.csv"), outcome.base_curve.to_csv())?;
    fs::write(dir.join("branch_loss.csv"), outcome.branch.curve.to_csv())?;
    Ok(())
}
