use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{reflect_index, Mask};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Pixels a metric is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricRegion {
    /// Where the region mask is 0.
    Unmasked,
    /// Where the region mask is 1.
    Masked,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub mse: f64,
    pub ssim: f64,
    /// Absent unless a perceptual backend is configured.
    pub lpips: Option<f64>,
    /// Absent unless an embedding backend is configured.
    pub clip_sim: Option<f64>,
    pub region: MetricRegion,
    pub n_images: usize,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn check_pair(a: &Image, b: &Image, region: Option<&Mask>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("images {:?} vs {:?}", a.dims(), b.dims())));
    }
    if let Some(m) = region {
        m.ensure_dims(a.dims(), "region mask vs image")?;
    }
    Ok(())
}

/// Pixel weights: 1 where the metric applies.
fn weights(dims: (usize, usize), region: Option<&Mask>) -> Result<Vec<bool>> {
    let w: Vec<bool> = match region {
        Some(m) => m.data().iter().map(|&v| v <= 0.5).collect(),
        None => vec![true; dims.0 * dims.1],
    };
    if !w.iter().any(|&x| x) {
        return Err(Error::Validation("metric region is empty".into()));
    }
    Ok(w)
}

/// Mean squared error over all channels of the pixels where `region` is 0
/// (or everywhere).
pub fn mse(a: &Image, b: &Image, region: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, region)?;
    let w = weights(a.dims(), region)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for c in 0..3 {
        let (pa, pb) = (a.tensor().plane(c), b.tensor().plane(c));
        for i in 0..pa.len() {
            if w[i] {
                let d = pa[i] - pb[i];
                acc += d * d;
                n += 1;
            }
        }
    }
    Ok(acc / n as f64)
}

pub fn psnr(a: &Image, b: &Image, region: Option<&Mask>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b, region)?))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter with reflect padding.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * plane[y * w + reflect_index(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect_index(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Per-pixel SSIM map of one channel.
fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_window();
    let mu_a = filter(a, h, w, &k);
    let mu_b = filter(b, h, w, &k);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let e_aa = filter(&aa, h, w, &k);
    let e_bb = filter(&bb, h, w, &k);
    let e_ab = filter(&ab, h, w, &k);
    (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .collect()
}

/// Mean SSIM (Gaussian 11×11 window, σ = 1.5) over channels and region
/// pixels. With a region, pixels outside it are zeroed in both images first so
/// their content cannot leak into the score.
pub fn ssim(a: &Image, b: &Image, region: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, region)?;
    let (h, w) = a.dims();
    let wts = weights((h, w), region)?;
    let n = wts.iter().filter(|&&x| x).count() as f64;
    let mut total = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = a.tensor().plane(c).iter().zip(&wts).map(|(v, &k)| if k { *v } else { 0.0 }).collect();
        let pb: Vec<f64> = b.tensor().plane(c).iter().zip(&wts).map(|(v, &k)| if k { *v } else { 0.0 }).collect();
        let map = ssim_map(&pa, &pb, h, w);
        total += map.iter().zip(&wts).filter(|(_, &k)| k).map(|(v, _)| v).sum::<f64>() / n;
    }
    Ok(total / 3.0)
}

/// PSNR, MSE and SSIM over the unmasked region of `region_mask` (or the full
/// image).
pub fn compute_fidelity(a: &Image, b: &Image, region_mask: Option<&Mask>) -> Result<MetricReport> {
    let m = mse(a, b, region_mask)?;
    Ok(MetricReport {
        psnr: psnr_from_mse(m),
        mse: m,
        ssim: ssim(a, b, region_mask)?,
        lpips: None,
        clip_sim: None,
        region: if region_mask.is_some() {
            MetricRegion::Unmasked
        } else {
            MetricRegion::Full
        },
        n_images: 1,
    })
}

/// Same metrics over the pixels where `mask` is 1.
pub fn compute_fidelity_masked(a: &Image, b: &Image, mask: &Mask) -> Result<MetricReport> {
    let mut r = compute_fidelity(a, b, Some(&mask.complement()))?;
    r.region = MetricRegion::Masked;
    Ok(r)
}
