//! Procedural scenes: a few flat-colored shapes on a plain background, with
//! a caption derived from the scene graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    White,
    Gray,
    Black,
}

impl Color {
    /// Colors shapes may take.
    pub const SHAPE_PALETTE: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
    ];

    pub const BACKGROUNDS: [Color; 3] = [Color::White, Color::Gray, Color::Black];

    pub const ALL: [Color; 9] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::White,
        Color::Gray,
        Color::Black,
    ];

    pub fn rgb8(&self) -> [u8; 3] {
        match self {
            Color::Red => [220, 30, 30],
            Color::Green => [30, 170, 60],
            Color::Blue => [40, 70, 210],
            Color::Yellow => [240, 210, 40],
            Color::Purple => [140, 50, 170],
            Color::Orange => [250, 140, 20],
            Color::White => [255, 255, 255],
            Color::Gray => [128, 128, 128],
            Color::Black => [0, 0, 0],
        }
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.rgb8().map(|v| v as f64 / 255.0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::White => "white",
            Color::Gray => "gray",
            Color::Black => "black",
        }
    }

    pub fn from_name(s: &str) -> Option<Color> {
        let s = if s == "grey" { "gray" } else { s };
        Color::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Palette entry nearest to `rgb` in Euclidean distance.
    pub fn nearest(rgb: [f64; 3]) -> (Color, f64) {
        Color::ALL
            .into_iter()
            .map(|c| {
                let p = c.rgb();
                let d = ((p[0] - rgb[0]).powi(2) + (p[1] - rgb[1]).powi(2) + (p[2] - rgb[2]).powi(2)).sqrt();
                (c, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("palette is non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn from_name(s: &str) -> Option<ShapeKind> {
        let s = s.strip_suffix('s').unwrap_or(s);
        ShapeKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether pixel offset `(dy, dx)` from the center lies inside a shape of
    /// half-size `s`. Every shape fits the `(2s+1)²` box.
    pub fn contains(&self, dy: i64, dx: i64, s: i64) -> bool {
        match self {
            ShapeKind::Circle => dy * dy + dx * dx <= s * s,
            ShapeKind::Square => dy.abs() <= s && dx.abs() <= s,
            // apex at the top, base on the bottom row
            ShapeKind::Triangle => dy.abs() <= s && 2 * dx.abs() <= dy + s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ShapeKind,
    pub color: Color,
    pub cy: usize,
    pub cx: usize,
    pub size: usize,
}

impl SceneObject {
    pub fn phrase(&self) -> String {
        format!("{} {}", self.color.name(), self.kind.name())
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        (
            self.cy - self.size,
            self.cx - self.size,
            self.cy + self.size,
            self.cx + self.size,
        )
    }

    pub fn covers(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as i64 - self.cy as i64, x as i64 - self.cx as i64);
        self.kind.contains(dy, dx, self.size as i64)
    }

    fn boxes_apart(&self, other: &SceneObject, gap: usize) -> bool {
        let (a0, b0, a1, b1) = self.bbox();
        let (c0, d0, c1, d1) = other.bbox();
        a1 + gap < c0 || c1 + gap < a0 || b1 + gap < d0 || d1 + gap < b0
    }
}

/// Geometry of one scene; the image and caption are pure functions of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub height: usize,
    pub width: usize,
    pub background: Color,
    pub objects: Vec<SceneObject>,
}

impl SceneGraph {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.cy < o.size || o.cx < o.size || o.cy + o.size >= self.height || o.cx + o.size >= self.width {
                return Err(Error::Validation(format!("object {i} leaves the canvas")));
            }
            for p in &self.objects[..i] {
                if (p.color, p.kind) == (o.color, o.kind) {
                    return Err(Error::Validation(format!("duplicate object {}", o.phrase())));
                }
                if !p.boxes_apart(o, 0) {
                    return Err(Error::Validation(format!("{} overlaps {}", o.phrase(), p.phrase())));
                }
            }
        }
        Ok(())
    }

    pub fn render(&self) -> Image {
        let mut img = self.render_background();
        for o in &self.objects {
            let (y0, x0, y1, x1) = o.bbox();
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if o.covers(y, x) {
                        img.set_pixel(y, x, o.color.rgb());
                    }
                }
            }
        }
        img
    }

    pub fn render_background(&self) -> Image {
        Image::filled(self.height, self.width, self.background.rgb())
    }

    pub fn object_mask(&self, index: usize) -> Result<Mask> {
        let o = self.objects.get(index).ok_or_else(|| {
            Error::NotFound(format!("object {index} (scene has {})", self.objects.len()))
        })?;
        Ok(Mask::from_fn(self.height, self.width, |y, x| {
            if o.covers(y, x) {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// `a red circle and a blue square on a white background`.
    pub fn caption(&self) -> String {
        let phrases: Vec<String> = self.objects.iter().map(|o| format!("a {}", o.phrase())).collect();
        let bg = format!("a {} background", self.background.name());
        if phrases.is_empty() {
            return bg;
        }
        format!("{} on {bg}", join_list(&phrases))
    }

    pub fn find(&self, color: Color, kind: ShapeKind) -> Option<usize> {
        self.objects.iter().position(|o| o.color == color && o.kind == kind)
    }
}

/// `a`, `a and b`, `a, b and c`.
pub fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Scene sampling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    /// Inclusive half-size range of each shape.
    pub size_range: (usize, usize),
    /// Inclusive object-count range.
    pub objects: (usize, usize),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            size_range: (2, 3),
            objects: (1, 3),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        if lo == 0 || lo > hi || 2 * hi + 1 > self.height.min(self.width) {
            return Err(Error::Config(format!("invalid size range {:?}", self.size_range)));
        }
        let (a, b) = self.objects;
        if a > b || b > Color::SHAPE_PALETTE.len() * ShapeKind::ALL.len() {
            return Err(Error::Config(format!("invalid object range {:?}", self.objects)));
        }
        Ok(())
    }
}

/// A rendered scene together with its graph and caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralScene {
    pub graph: SceneGraph,
    pub image: Image,
    pub caption: String,
}

impl ProceduralScene {
    pub fn from_graph(graph: SceneGraph) -> Result<Self> {
        graph.validate()?;
        Ok(Self {
            image: graph.render(),
            caption: graph.caption(),
            graph,
        })
    }
}

/// Draw a random scene. Objects that cannot be placed without overlap after a
/// bounded number of attempts are dropped, keeping at least one.
pub fn random_scene<R: Rng + ?Sized>(rng: &mut R, params: &SceneParams) -> Result<ProceduralScene> {
    params.validate()?;
    let background = Color::BACKGROUNDS[rng.random_range(0..Color::BACKGROUNDS.len())];
    let want = rng.random_range(params.objects.0..=params.objects.1);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(want);
    let mut attempts = 0;
    while objects.len() < want && attempts < 200 {
        attempts += 1;
        let size = rng.random_range(params.size_range.0..=params.size_range.1);
        let cy = rng.random_range(size..params.height - size);
        let cx = rng.random_range(size..params.width - size);
        let color = Color::SHAPE_PALETTE[rng.random_range(0..Color::SHAPE_PALETTE.len())];
        let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
        let cand = SceneObject { kind, color, cy, cx, size };
        let clash = objects
            .iter()
            .any(|o| (o.color, o.kind) == (color, kind) || !o.boxes_apart(&cand, 1));
        if !clash {
            objects.push(cand);
        }
    }
    if objects.len() < params.objects.0.max(1) {
        return Err(Error::Generation(format!(
            "could not place {} objects on a {}x{} canvas",
            params.objects.0, params.height, params.width
        )));
    }
    ProceduralScene::from_graph(SceneGraph {
        height: params.height,
        width: params.width,
        background,
        objects,
    })
}
