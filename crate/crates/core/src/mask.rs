//! Mask handling: resizing to latent resolution, blurring, pixel-space paste
//! blending, the blended-latent baseline, and random mask synthesis/filtering.
//!
//! Polarity is global: `1` marks the region to generate, `0` the region to keep.

use std::collections::VecDeque;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_u8, Image};
use crate::tensor::{LatentImage, Tensor3};

/// `H×W` mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            data: vec![v.clamp(0.0, 1.0); height * width],
        }
    }

    /// Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer of length {} does not fit {height}x{width}",
                data.len()
            )));
        }
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn validate_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::Validation("mask must be binary (values 0 or 1)".into()))
        }
    }

    /// Fraction of the mask's total mass.
    pub fn area_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| 1.0 - v).collect(),
            ..self.clone()
        }
    }

    pub fn union(&self, other: &Mask) -> Result<Self> {
        self.ensure_dims(other.dims(), "mask union")?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.max(*b))
                .collect(),
            ..self.clone()
        })
    }

    /// Pixels set here and not set in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Self> {
        self.ensure_dims(other.dims(), "mask difference")?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| if *b > 0.0 { 0.0 } else { *a })
                .collect(),
            ..self.clone()
        })
    }

    /// Binary mask of pixels with value above 0.5.
    pub fn binarized(&self) -> Self {
        Self {
            data: self
                .data
                .iter()
                .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
                .collect(),
            ..self.clone()
        }
    }

    /// Square (Chebyshev) dilation of the nonzero support by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let (h, w) = self.dims();
        let r = radius as isize;
        Self::from_fn(h, w, |y, x| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sy, sx) = (y as isize + dy, x as isize + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w && self.get(sy as usize, sx as usize) > 0.0 {
                        return 1.0;
                    }
                }
            }
            0.0
        })
    }

    pub fn ensure_dims(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!(
                "{what}: mask is {}x{}, expected {}x{}",
                self.height, self.width, dims.0, dims.1
            )));
        }
        Ok(())
    }

    /// One-channel tensor view.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_vec(1, self.height, self.width, self.data.clone()).expect("shape matches")
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.pixels().map(|p| f64::from(p[0]) / 255.0).collect();
        Self { height: h, width: w, data }
    }

    pub fn to_gray(&self) -> GrayImage {
        let mut g = GrayImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                g.put_pixel(x as u32, y as u32, Luma([to_u8(self.get(y, x))]));
            }
        }
        g
    }

    /// Load a single-channel 8-bit PNG (255 = edit region).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::load(path, e))?;
        Ok(Self::from_gray(&img.to_luma8()))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_gray(&image::load_from_memory(bytes)?.to_luma8()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_gray().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// `image · (1 − mask)`: the image with the edit region zeroed.
pub fn mask_out(image: &Image, mask: &Mask) -> Result<Image> {
    mask.ensure_dims(image.dims(), "mask vs image")?;
    let mut t = image.tensor().clone();
    for c in 0..3 {
        for (v, m) in t.plane_mut(c).iter_mut().zip(mask.data()) {
            *v *= 1.0 - m;
        }
    }
    Image::new(t)
}

/// Catmull-Rom cubic kernel (`a = -0.5`).
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Normalized resampling weights `(first_index, weights)` for each output
/// position when shrinking `n_in` samples to `n_out`. The kernel is stretched
/// by the scale factor so every source sample contributes.
fn cubic_weights(n_in: usize, n_out: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let support = 2.0 * scale;
            let lo = ((center - support).ceil().max(0.0)) as usize;
            let hi = ((center + support).floor() as isize).min(n_in as isize - 1).max(0) as usize;
            let mut ws: Vec<f64> = (lo..=hi)
                .map(|i| cubic_kernel((i as f64 - center) / scale))
                .collect();
            let sum: f64 = ws.iter().sum();
            ws.iter_mut().for_each(|w| *w /= sum);
            (lo, ws)
        })
        .collect()
}

/// Bicubic downsampling to `target_h × target_w`, clamped to `[0, 1]`.
pub fn downsample_mask(m: &Mask, target_h: usize, target_w: usize) -> Result<Mask> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Shape("target size must be positive".into()));
    }
    if target_h > m.height || target_w > m.width {
        return Err(Error::Shape(format!(
            "cannot downsample {}x{} mask to larger {target_h}x{target_w}",
            m.height, m.width
        )));
    }
    if (target_h, target_w) == m.dims() {
        return Ok(m.clone());
    }
    let wx = cubic_weights(m.width, target_w);
    let wy = cubic_weights(m.height, target_h);
    // horizontal pass
    let mut tmp = vec![0.0; m.height * target_w];
    for y in 0..m.height {
        for (ox, (lo, ws)) in wx.iter().enumerate() {
            tmp[y * target_w + ox] = ws
                .iter()
                .enumerate()
                .map(|(k, w)| w * m.get(y, lo + k))
                .sum();
        }
    }
    let mut out = Vec::with_capacity(target_h * target_w);
    for (lo, ws) in &wy {
        for ox in 0..target_w {
            let v: f64 = ws
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[(lo + k) * target_w + ox])
                .sum();
            out.push(v);
        }
    }
    Mask::from_vec(target_h, target_w, out)
}

/// Gaussian blur parameters: `sigma = radius / 2`, kernel half-width `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub radius: usize,
}

impl BlurSpec {
    pub const DEFAULT_RADIUS: usize = 7;

    pub fn new(radius: usize) -> Self {
        Self { radius }
    }

    pub fn sigma(&self) -> f64 {
        self.radius as f64 / 2.0
    }

    /// 1-D kernel of length `2·radius + 1`, summing to one.
    pub fn kernel(&self) -> Vec<f64> {
        if self.radius == 0 {
            return vec![1.0];
        }
        let s = self.sigma();
        let r = self.radius as isize;
        let mut k: Vec<f64> = (-r..=r)
            .map(|x| (-(x * x) as f64 / (2.0 * s * s)).exp())
            .collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            radius: Self::DEFAULT_RADIUS,
        }
    }
}

/// Mirror an out-of-range index back into `[0, n)` without repeating the edge.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Separable Gaussian blur with reflect padding, clamped to `[0, 1]`.
pub fn blur_mask(m: &Mask, spec: BlurSpec) -> Mask {
    if spec.radius == 0 {
        return m.clone();
    }
    let k = spec.kernel();
    let r = spec.radius as isize;
    let (h, w) = m.dims();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = reflect_index(x as isize + j as isize - r, w);
                acc += kv * m.get(y, sx);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sy = reflect_index(y as isize + j as isize - r, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Mask::from_vec(h, w, out).expect("same dims")
}

/// `generated·m + source·(1 − m)` per pixel and channel.
pub fn paste_blend(source: &Image, generated: &Image, m_blur: &Mask) -> Result<Image> {
    if source.dims() != generated.dims() {
        return Err(Error::Shape(format!(
            "source {:?} vs generated {:?}",
            source.dims(),
            generated.dims()
        )));
    }
    m_blur.ensure_dims(source.dims(), "paste_blend")?;
    let mut out = source.tensor().clone();
    for c in 0..3 {
        let g = generated.tensor().plane(c);
        for (i, o) in out.plane_mut(c).iter_mut().enumerate() {
            let m = m_blur.data()[i];
            *o = g[i] * m + *o * (1.0 - m);
        }
    }
    Image::from_tensor_clamped(&out)
}

/// Which side of the mask the blended-latent hook overwrites.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendPolarity {
    /// Keep generated content where the mask is 1, known content where it is 0.
    #[default]
    GenerateWhereOne,
    /// Formula exactly as commonly printed: known content where the mask is 1.
    AsPrinted,
}

/// Blended-latent step: mix the sampler's latent with the noised known latent.
pub fn latent_blend(
    z_step: &LatentImage,
    z_step_masked: &LatentImage,
    m_resized: &Mask,
    polarity: BlendPolarity,
) -> Result<LatentImage> {
    z_step.ensure_same_shape(z_step_masked, "latent_blend")?;
    m_resized.ensure_dims((z_step.height(), z_step.width()), "latent_blend")?;
    let mut out = z_step.clone();
    let n = out.plane_len();
    for c in 0..out.channels() {
        let known = z_step_masked.plane(c);
        let plane = out.plane_mut(c);
        for i in 0..n {
            let m = match polarity {
                BlendPolarity::GenerateWhereOne => m_resized.data()[i],
                BlendPolarity::AsPrinted => 1.0 - m_resized.data()[i],
            };
            plane[i] = plane[i] * m + known[i] * (1.0 - m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrushParams {
    pub strokes: usize,
    /// Inclusive stroke width range in pixels.
    pub width_range: (usize, usize),
    /// Accepted coverage interval, as a fraction of the image.
    pub coverage_bounds: (f64, f64),
}

impl Default for BrushParams {
    fn default() -> Self {
        Self {
            strokes: 3,
            width_range: (2, 5),
            coverage_bounds: (0.05, 0.5),
        }
    }
}

impl BrushParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.coverage_bounds;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Parameter(format!(
                "coverage bounds [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        let (wmin, wmax) = self.width_range;
        if wmin == 0 || wmin > wmax {
            return Err(Error::Parameter(format!(
                "width range [{wmin}, {wmax}] must satisfy 1 <= min <= max"
            )));
        }
        Ok(())
    }
}

const BRUSH_ATTEMPTS: usize = 64;

fn stamp_segment(m: &mut Mask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    let (h, w) = m.dims();
    let r2 = radius * radius;
    for s in 0..=steps {
        let f = s as f64 / steps as f64;
        let (cy, cx) = (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as isize).min(h as isize - 1);
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as isize).min(w as isize - 1);
        if y1 < 0 || x1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= r2 {
                    m.set(y, x, 1.0);
                }
            }
        }
    }
}

fn draw_stroke<R: Rng + ?Sized>(m: &mut Mask, rng: &mut R, params: &BrushParams) {
    let (h, w) = m.dims();
    let width = rng.random_range(params.width_range.0..=params.width_range.1) as f64;
    let vertices = rng.random_range(2..=5);
    let max_len = (h.max(w) as f64 / 2.0).max(2.0);
    let mut p = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
    for _ in 1..vertices {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(1.0..=max_len);
        let q = (
            (p.0 + len * angle.sin()).clamp(0.0, h as f64 - 1.0),
            (p.1 + len * angle.cos()).clamp(0.0, w as f64 - 1.0),
        );
        stamp_segment(m, p, q, width / 2.0);
        p = q;
    }
}

/// Union of random thick polylines whose coverage falls inside
/// `params.coverage_bounds`.
///
/// Each attempt draws `params.strokes` strokes, tops up with extra strokes
/// while coverage is below the lower bound, and is discarded if it overshoots.
pub fn random_brush_mask<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    params: &BrushParams,
) -> Result<Mask> {
    params.validate()?;
    if params.strokes == 0 {
        return Ok(Mask::zeros(height, width));
    }
    let (lo, hi) = params.coverage_bounds;
    for _ in 0..BRUSH_ATTEMPTS {
        let mut m = Mask::zeros(height, width);
        for _ in 0..params.strokes {
            draw_stroke(&mut m, rng, params);
        }
        let mut extra = 0;
        while m.area_fraction() < lo && extra < 4 * params.strokes {
            draw_stroke(&mut m, rng, params);
            extra += 1;
        }
        let cov = m.area_fraction();
        if cov >= lo && cov <= hi {
            return Ok(m);
        }
    }
    Err(Error::Generation(format!(
        "no brush mask with coverage in [{lo}, {hi}] after {BRUSH_ATTEMPTS} attempts"
    )))
}

/// Number of 4-connected components of the `1` region.
pub fn connected_components(m: &Mask) -> usize {
    let (h, w) = m.dims();
    let mut seen = vec![false; h * w];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || m.data()[start] <= 0.5 {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && m.data()[j] > 0.5 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    count
}

/// Keep a binary mask only if it is large enough and, when required, a single
/// 4-connected region.
pub fn filter_mask(m: &Mask, min_area_frac: f64, require_connected: bool) -> Result<bool> {
    m.validate_binary()?;
    if m.area_fraction() < min_area_frac || m.count_ones() == 0 {
        return Ok(false);
    }
    if require_connected && connected_components(m) != 1 {
        return Ok(false);
    }
    Ok(true)
}
