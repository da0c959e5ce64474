use std::collections::BTreeMap;

use super::grammar::tokenize;
use crate::error::Result;
use crate::image::Image;
use crate::mask::Mask;
use crate::scene::{join_list, Color, SceneGraph, ShapeKind};

/// One candidate region for a text query.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub mask: Mask,
    pub confidence: f64,
}

/// Text-queried segmentation.
pub trait DetectorClient: Send + Sync {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>>;
}

impl<D: DetectorClient + ?Sized> DetectorClient for &D {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>> {
        (**self).detect(image, query)
    }
}

impl<D: DetectorClient + ?Sized> DetectorClient for Box<D> {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>> {
        (**self).detect(image, query)
    }
}

impl<D: DetectorClient + ?Sized> DetectorClient for std::sync::Arc<D> {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>> {
        (**self).detect(image, query)
    }
}

/// Queries that select every foreground object.
const GENERIC: &[&str] = &["foreground", "object", "objects", "shape", "shapes", "everything", "thing", "things"];

/// Parsed `[color] [shape]` query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeQuery {
    pub color: Option<Color>,
    pub kind: Option<ShapeKind>,
}

impl ShapeQuery {
    /// `None` when the query names something outside the color/shape vocabulary.
    pub fn parse(query: &str) -> Option<Self> {
        let mut q = ShapeQuery { color: None, kind: None };
        let mut generic = false;
        for w in tokenize(query) {
            if let Some(c) = Color::from_name(&w) {
                q.color = Some(c);
            } else if let Some(k) = ShapeKind::from_name(&w) {
                q.kind = Some(k);
            } else if GENERIC.contains(&w.as_str()) {
                generic = true;
            } else if !["the", "a", "an"].contains(&w.as_str()) {
                return None;
            }
        }
        (generic || q.color.is_some() || q.kind.is_some()).then_some(q)
    }

    pub fn matches(&self, color: Color, kind: Option<ShapeKind>) -> bool {
        self.color.is_none_or(|c| c == color) && self.kind.is_none_or(|k| Some(k) == kind)
    }
}

/// A connected flat-color region found in an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub color: Color,
    /// Best-fitting shape and its IoU, if any fits.
    pub kind: Option<ShapeKind>,
    pub fit: f64,
    /// Mean color distance of the region to its palette entry.
    pub color_error: f64,
    pub mask: Mask,
}

impl Region {
    pub fn phrase(&self) -> String {
        match self.kind {
            Some(k) => format!("{} {}", self.color.name(), k.name()),
            None => format!("{} object", self.color.name()),
        }
    }

    pub fn confidence(&self, tolerance: f64) -> f64 {
        (self.fit * (1.0 - self.color_error / tolerance)).clamp(0.0, 1.0)
    }
}

/// Flat-color scene parse: background color plus foreground regions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnalysis {
    pub background: Color,
    pub regions: Vec<Region>,
}

impl SceneAnalysis {
    /// Caption in the same grammar as procedural scenes.
    pub fn caption(&self) -> String {
        let items: Vec<String> = self.regions.iter().map(|r| format!("a {}", r.phrase())).collect();
        let bg = format!("a {} background", self.background.name());
        if items.is_empty() {
            bg
        } else {
            format!("{} on {bg}", join_list(&items))
        }
    }
}

/// Snap pixels to the palette, take the most frequent color as background and
/// split the rest into 4-connected single-color regions.
pub fn analyze(image: &Image, tolerance: f64) -> SceneAnalysis {
    let (h, w) = image.dims();
    let mut labels: Vec<Option<(Color, f64)>> = Vec::with_capacity(h * w);
    let mut counts: BTreeMap<Color, usize> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let (c, d) = Color::nearest(image.pixel(y, x));
            if d <= tolerance {
                *counts.entry(c).or_default() += 1;
                labels.push(Some((c, d)));
            } else {
                labels.push(None);
            }
        }
    }
    let background = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| *c)
        .unwrap_or(Color::White);

    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    for start in 0..h * w {
        let Some((color, _)) = labels[start] else { continue };
        if seen[start] || color == background {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut pixels = Vec::new();
        let mut err = 0.0;
        while let Some(p) = stack.pop() {
            pixels.push(p);
            err += labels[p].expect("labelled").1;
            let (y, x) = (p / w, p % w);
            let mut push = |q: usize| {
                if !seen[q] && labels[q].is_some_and(|(c, _)| c == color) {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
        }
        let mut data = vec![0.0; h * w];
        for &p in &pixels {
            data[p] = 1.0;
        }
        let mask = Mask::from_vec(h, w, data).expect("sized mask");
        let (kind, fit) = fit_shape(&pixels, w);
        regions.push(Region {
            color,
            kind,
            fit,
            color_error: err / pixels.len() as f64,
            mask,
        });
    }
    SceneAnalysis { background, regions }
}

/// Best shape by IoU against shapes rasterised in the region's bounding box.
fn fit_shape(pixels: &[usize], w: usize) -> (Option<ShapeKind>, f64) {
    let ys = pixels.iter().map(|p| p / w);
    let xs = pixels.iter().map(|p| p % w);
    let (y0, y1) = (ys.clone().min().unwrap_or(0), ys.max().unwrap_or(0));
    let (x0, x1) = (xs.clone().min().unwrap_or(0), xs.max().unwrap_or(0));
    let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
    if bh != bw || bh % 2 == 0 || bh < 3 {
        return (None, 0.5);
    }
    let s = (bh / 2) as i64;
    let (cy, cx) = (y0 as i64 + s, x0 as i64 + s);
    let inside: std::collections::HashSet<usize> = pixels.iter().copied().collect();
    let mut best = (None, 0.0);
    for k in ShapeKind::ALL {
        let (mut inter, mut uni) = (0usize, 0usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let a = k.contains(y as i64 - cy, x as i64 - cx, s);
                let b = inside.contains(&(y * w + x));
                inter += (a && b) as usize;
                uni += (a || b) as usize;
            }
        }
        let iou = inter as f64 / uni.max(1) as f64;
        if iou > best.1 {
            best = (Some(k), iou);
        }
    }
    best
}

/// Pixel-based detector for flat-colored shape scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorShapeDetector {
    /// Maximum RGB distance for a pixel to count as a palette color.
    pub tolerance: f64,
}

impl Default for ColorShapeDetector {
    fn default() -> Self {
        Self { tolerance: 0.15 }
    }
}

impl DetectorClient for ColorShapeDetector {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>> {
        let Some(q) = ShapeQuery::parse(query) else {
            return Ok(Vec::new());
        };
        let analysis = analyze(image, self.tolerance);
        Ok(analysis
            .regions
            .into_iter()
            .filter(|r| q.matches(r.color, r.kind))
            .map(|r| Detection {
                label: r.phrase(),
                confidence: r.confidence(self.tolerance),
                mask: r.mask,
            })
            .collect())
    }
}

/// Ground-truth detector over a known scene graph; every match has
/// confidence 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraphDetector {
    pub graph: SceneGraph,
}

impl DetectorClient for SceneGraphDetector {
    fn detect(&self, _image: &Image, query: &str) -> Result<Vec<Detection>> {
        let Some(q) = ShapeQuery::parse(query) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for (i, o) in self.graph.objects.iter().enumerate() {
            if q.matches(o.color, Some(o.kind)) {
                out.push(Detection {
                    label: o.phrase(),
                    mask: self.graph.object_mask(i)?,
                    confidence: 1.0,
                });
            }
        }
        Ok(out)
    }
}

/// Returns canned detections for any query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedDetector {
    pub detections: Vec<Detection>,
}

impl DetectorClient for FixedDetector {
    fn detect(&self, _image: &Image, _query: &str) -> Result<Vec<Detection>> {
        Ok(self.detections.clone())
    }
}

/// Rewrites query words before delegating, e.g. `rose → red circle`.
#[derive(Debug, Clone)]
pub struct AliasDetector<D> {
    pub inner: D,
    pub aliases: BTreeMap<String, String>,
}

impl<D: DetectorClient> DetectorClient for AliasDetector<D> {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>> {
        let key = tokenize(query)
            .into_iter()
            .filter(|w| !["the", "a", "an"].contains(&w.as_str()))
            .collect::<Vec<_>>()
            .join(" ");
        let q = self.aliases.get(&key).map_or(query, String::as_str);
        self.inner.detect(image, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{random_scene, SceneObject, SceneParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_circle() -> SceneGraph {
        SceneGraph {
            height: 16,
            width: 16,
            background: Color::White,
            objects: vec![SceneObject { kind: ShapeKind::Circle, color: Color::Red, cy: 7, cx: 7, size: 3 }],
        }
    }

    #[test]
    fn exact_circle_mask_with_full_confidence() {
        let g = one_circle();
        let img = g.render();
        let d = ColorShapeDetector::default().detect(&img, "red circle").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].mask, g.object_mask(0).unwrap());
        assert_eq!(d[0].confidence, 1.0);
        assert!(ColorShapeDetector::default().detect(&img, "unicorn").unwrap().is_empty());
        assert!(ColorShapeDetector::default().detect(&img, "blue circle").unwrap().is_empty());
    }

    #[test]
    fn analysis_recovers_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s = random_scene(&mut rng, &SceneParams::default()).unwrap();
            let a = analyze(&s.image.quantized(), 0.15);
            assert_eq!(a.background, s.graph.background);
            assert_eq!(a.regions.len(), s.graph.objects.len());
            for r in &a.regions {
                let i = s.graph.find(r.color, r.kind.unwrap()).expect("object found");
                assert_eq!(r.mask, s.graph.object_mask(i).unwrap());
            }
        }
    }

    #[test]
    fn alias_rewrites_query() {
        let g = one_circle();
        let det = AliasDetector {
            inner: ColorShapeDetector::default(),
            aliases: [("rose".to_string(), "red circle".to_string())].into(),
        };
        assert_eq!(det.detect(&g.render(), "the rose").unwrap().len(), 1);
    }
}
