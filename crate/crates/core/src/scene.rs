//! Flat-shaded 2-D scenes: a background, an optional ground band and a list of
//! disks and rectangles. Shared by the synthetic training corpus and the
//! procedural keyframe backend.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub type Color = [u8; 3];

pub const NIGHT: Color = [16, 16, 24];
pub const GROUND: Color = [110, 110, 110];

/// Colour words understood by the procedural renderer.
pub const NAMED_COLORS: [(&str, Color); 10] = [
    ("white", [245, 245, 245]),
    ("red", [220, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [50, 80, 230]),
    ("yellow", [240, 220, 40]),
    ("orange", [245, 140, 30]),
    ("brown", [130, 80, 40]),
    ("gray", [128, 128, 128]),
    ("black", [10, 10, 10]),
    ("purple", [140, 60, 200]),
];

pub fn named_color(word: &str) -> Option<Color> {
    NAMED_COLORS.iter().find(|(n, _)| *n == word).map(|(_, c)| *c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Rect,
}

/// Geometry in fractions of the frame: centre `(cx, cy)` and full extent `(w, h)`.
/// `cy` grows downwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub background: Color,
    /// Height of the ground band as a fraction of the frame, drawn at the bottom.
    pub ground: Option<(f64, Color)>,
    pub shapes: Vec<Shape>,
}

impl Scene {
    pub fn new(background: Color) -> Self {
        Self {
            background,
            ground: None,
            shapes: Vec::new(),
        }
    }

    pub fn with_ground(mut self, frac: f64, color: Color) -> Self {
        self.ground = Some((frac, color));
        self
    }

    pub fn push(&mut self, shape: Shape) {
        self.shapes.push(shape);
    }

    /// Top edge of the ground band, as a fraction of the height.
    pub fn ground_top(&self) -> f64 {
        self.ground.map(|(f, _)| 1.0 - f).unwrap_or(1.0)
    }

    /// Pixel-centre sampling; later shapes paint over earlier ones.
    pub fn render(&self, width: u32, height: u32) -> RgbImage {
        let mut img = RgbImage::from_pixel(width, height, Rgb(self.background));
        let (wf, hf) = (width as f64, height as f64);
        for y in 0..height {
            let py = (y as f64 + 0.5) / hf;
            for x in 0..width {
                let px = (x as f64 + 0.5) / wf;
                let mut c = self.background;
                if let Some((frac, gc)) = self.ground {
                    if py >= 1.0 - frac {
                        c = gc;
                    }
                }
                for s in &self.shapes {
                    if s.contains(px, py) {
                        c = s.color;
                    }
                }
                img.put_pixel(x, y, Rgb(c));
            }
        }
        img
    }
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        let dx = (px - self.cx) / (self.w / 2.0);
        let dy = (py - self.cy) / (self.h / 2.0);
        match self.kind {
            ShapeKind::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Disk => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// A shape whose geometry and colour move linearly from `from` to `to` as
/// progress goes from 0 to 1. The kind is taken from `from`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeTrack {
    pub from: Shape,
    pub to: Shape,
}

impl ShapeTrack {
    pub fn fixed(shape: Shape) -> Self {
        Self { from: shape, to: shape }
    }

    pub fn at(&self, p: f64) -> Shape {
        let l = |a: f64, b: f64| a + p * (b - a);
        let mut color = [0u8; 3];
        for (i, c) in color.iter_mut().enumerate() {
            *c = l(self.from.color[i] as f64, self.to.color[i] as f64)
                .round()
                .clamp(0.0, 255.0) as u8;
        }
        Shape {
            kind: self.from.kind,
            cx: l(self.from.cx, self.to.cx),
            cy: l(self.from.cy, self.to.cy),
            w: l(self.from.w, self.to.w),
            h: l(self.from.h, self.to.h),
            color,
        }
    }
}

/// A scene parameterized by a progress value in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTrack {
    pub background: Color,
    #[serde(default)]
    pub ground: Option<(f64, Color)>,
    pub shapes: Vec<ShapeTrack>,
}

impl SceneTrack {
    pub fn at(&self, p: f64) -> Scene {
        let p = p.clamp(0.0, 1.0);
        Scene {
            background: self.background,
            ground: self.ground,
            shapes: self.shapes.iter().map(|s| s.at(p)).collect(),
        }
    }
}
