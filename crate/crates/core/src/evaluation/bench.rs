use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backends::{text_alignment, EmbeddingBackend, PerceptualBackend};
use super::metrics::{compute_fidelity, MetricReport};
use crate::conductor::{ModelBundle, RoundParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{blur_mask, mask_out, paste_blend, BlurSpec, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Mask covers an object to be regenerated.
    Inside,
    /// Mask covers everything but the object.
    Outside,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Inside => "inside",
            Split::Outside => "outside",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub caption: String,
    pub split: Split,
}

/// Benchmark description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub benchmark: String,
    pub items: Vec<ManifestItem>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BenchmarkManifest {
    /// Parse and check that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::load(path, e))?;
        let mut m: BenchmarkManifest = serde_json::from_slice(&bytes).map_err(|e| Error::load(path, e))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if m.items.is_empty() {
            return Err(Error::load(path, "manifest has no items"));
        }
        for item in &m.items {
            for p in [&item.image_path, &item.mask_path] {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(Error::load(full, "referenced file does not exist"));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }
}

/// Anything that fills a masked region given a caption.
pub trait Inpainter: Sync {
    fn inpaint(&self, image: &Image, mask: &Mask, caption: &str, seed: u64) -> Result<Image>;
}

/// Dual-branch bundle as an inpainter; optionally blends back like an edit
/// round.
pub struct BundleInpainter<'a> {
    pub bundle: &'a ModelBundle,
    pub params: RoundParams,
    pub blend: bool,
}

impl Inpainter for BundleInpainter<'_> {
    fn inpaint(&self, image: &Image, mask: &Mask, caption: &str, seed: u64) -> Result<Image> {
        let mask = mask.binarized();
        let params = RoundParams { seed, ..self.params };
        let out = self.bundle.inpaint(
            &mask_out(image, &mask)?,
            &mask,
            caption,
            &params.injection(),
            &params.sampler(),
        )?;
        if self.blend {
            paste_blend(image, &out.image, &blur_mask(&mask, BlurSpec::new(params.blur_radius)))
        } else {
            Ok(out.image)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub index: usize,
    pub split: Split,
    pub caption: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Arithmetic means over successful items of one split (or all).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    pub clip_sim: Option<f64>,
    pub n: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub benchmark: String,
    pub items: Vec<ItemResult>,
    pub summaries: Vec<SplitSummary>,
}

pub const CSV_HEADER: &str = "benchmark,split,psnr,mse,ssim,lpips,clip_sim,n";

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean of an optional field; absent if any contributing item lacks it.
fn mean_opt(xs: &[&MetricReport], f: impl Fn(&MetricReport) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = xs.iter().map(|r| f(r)).collect();
    vals.and_then(|v| mean(v.into_iter()))
}

pub fn summarize(label: &str, items: &[&ItemResult]) -> SplitSummary {
    let ok: Vec<&MetricReport> = items.iter().filter_map(|i| i.metrics.as_ref()).collect();
    SplitSummary {
        split: label.to_string(),
        psnr: mean(ok.iter().map(|r| r.psnr)),
        mse: mean(ok.iter().map(|r| r.mse)),
        ssim: mean(ok.iter().map(|r| r.ssim)),
        lpips: mean_opt(&ok, |r| r.lpips),
        clip_sim: mean_opt(&ok, |r| r.clip_sim),
        n: ok.len(),
        failed: items.len() - ok.len(),
    }
}

impl BenchReport {
    pub fn from_items(benchmark: &str, items: Vec<ItemResult>) -> Self {
        let mut summaries = Vec::new();
        for split in [Split::Inside, Split::Outside] {
            let sel: Vec<&ItemResult> = items.iter().filter(|i| i.split == split).collect();
            if !sel.is_empty() {
                summaries.push(summarize(split.as_str(), &sel));
            }
        }
        summaries.push(summarize("all", &items.iter().collect::<Vec<_>>()));
        Self {
            benchmark: benchmark.to_string(),
            items,
            summaries,
        }
    }

    pub fn failed(&self) -> usize {
        self.items.iter().filter(|i| i.metrics.is_none()).count()
    }

    /// One row per split plus `all`; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.benchmark,
                s.split,
                cell(s.psnr),
                cell(s.mse),
                cell(s.ssim),
                cell(s.lpips),
                cell(s.clip_sim),
                s.n
            );
        }
        out
    }
}

#[derive(Default)]
pub struct BenchBackends<'a> {
    pub perceptual: Option<&'a dyn PerceptualBackend>,
    pub embedding: Option<&'a dyn EmbeddingBackend>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { seed: 0, jobs: 1 }
    }
}

fn run_item(
    manifest: &BenchmarkManifest,
    index: usize,
    inpainter: &dyn Inpainter,
    backends: &BenchBackends<'_>,
    seed: u64,
) -> Result<MetricReport> {
    let item = &manifest.items[index];
    let image = Image::load_png(manifest.resolve(&item.image_path))?;
    let mask = Mask::load_png(manifest.resolve(&item.mask_path))?.binarized();
    mask.ensure_dims(image.dims(), "manifest mask vs image")?;
    let result = inpainter.inpaint(&image, &mask, &item.caption, seed.wrapping_add(index as u64))?;
    let mut report = compute_fidelity(&result, &image, Some(&mask))?;
    if let Some(p) = backends.perceptual {
        report.lpips = Some(p.distance(&result, &image)?);
    }
    if let Some(e) = backends.embedding {
        report.clip_sim = Some(text_alignment(&result, &item.caption, e)?);
    }
    Ok(report)
}

/// Inpaint every manifest item and score the unmasked region against the
/// source. Item failures are recorded and excluded from the means.
pub fn run_benchmark(
    manifest: &BenchmarkManifest,
    inpainter: &dyn Inpainter,
    backends: &BenchBackends<'_>,
    cfg: &BenchConfig,
) -> BenchReport {
    let n = manifest.items.len();
    let jobs = cfg.jobs.clamp(1, n.max(1));
    let mut slots: Vec<Option<Result<MetricReport>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<(usize, &mut [Option<Result<MetricReport>>])> = {
            let size = n.div_ceil(jobs).max(1);
            slots.chunks_mut(size).enumerate().map(|(k, c)| (k * size, c)).collect()
        };
        for (offset, chunk) in chunks {
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_item(manifest, offset + j, inpainter, backends, cfg.seed));
                }
            });
        }
    });
    let items = slots
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let item = &manifest.items[index];
            let (metrics, error) = match r.expect("every slot filled") {
                Ok(m) => (Some(m), None),
                Err(e) => {
                    log::warn!("item {index} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            ItemResult {
                index,
                split: item.split,
                caption: item.caption.clone(),
                metrics,
                error,
            }
        })
        .collect();
    BenchReport::from_items(&manifest.benchmark, items)
}
