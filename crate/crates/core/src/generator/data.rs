//! Synthetic pre-training corpus: coloured squares that fall or slide over a
//! dark background with a ground band.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::Arch;
use super::tensor::VideoTensor;
use super::train::TrainItem;
use crate::error::{ensure, Result};
use crate::scene::{named_color, Scene, Shape, ShapeKind, GROUND, NIGHT};

pub const CORPUS_COLORS: [&str; 4] = ["white", "red", "green", "blue"];

/// Ground band height as a fraction of the frame.
pub const GROUND_FRAC: f64 = 0.125;
/// Square side as a fraction of the frame.
pub const SQUARE_FRAC: f64 = 0.1875;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Falls,
    SlidesRight,
    SlidesLeft,
}

impl Motion {
    pub const ALL: [Motion; 3] = [Motion::Falls, Motion::SlidesRight, Motion::SlidesLeft];

    pub fn caption(self, color: &str) -> String {
        match self {
            Motion::Falls => format!("A {color} square falls toward the ground."),
            Motion::SlidesRight => format!("A {color} square slides to the right."),
            Motion::SlidesLeft => format!("A {color} square slides to the left."),
        }
    }

    /// Square centre at progress `p ∈ [0, 1]`.
    pub fn center(self, p: f64) -> (f64, f64) {
        let half = SQUARE_FRAC / 2.0;
        let top = 1.0 / 32.0 + half;
        let rest = 1.0 - GROUND_FRAC - half;
        let left = 1.0 / 32.0 + half;
        let right = 1.0 - 1.0 / 32.0 - half;
        match self {
            Motion::Falls => (0.5, top + p * (rest - top)),
            Motion::SlidesRight => (left + p * (right - left), rest),
            Motion::SlidesLeft => (right + p * (left - right), rest),
        }
    }
}

pub fn square_scene(color: &str, motion: Motion, p: f64) -> Scene {
    let mut s = Scene::new(NIGHT).with_ground(GROUND_FRAC, GROUND);
    let (cx, cy) = motion.center(p);
    s.push(Shape {
        kind: ShapeKind::Rect,
        cx,
        cy,
        w: SQUARE_FRAC,
        h: SQUARE_FRAC,
        color: named_color(color).unwrap_or([255, 255, 255]),
    });
    s
}

pub fn square_video(arch: &Arch, frames: usize, color: &str, motion: Motion) -> Result<VideoTensor> {
    ensure(frames >= 1, || "a video needs at least one frame".into())?;
    let imgs: Vec<_> = (0..frames)
        .map(|f| {
            let p = if frames == 1 {
                0.0
            } else {
                f as f64 / (frames - 1) as f64
            };
            square_scene(color, motion, p).render(arch.width as u32, arch.height as u32)
        })
        .collect();
    VideoTensor::from_frames(&imgs)
}

/// Generic words mixed into paraphrases so the generator learns to key on
/// colour and motion words rather than on whole captions.
pub const FILLER_WORDS: [&str; 32] = [
    "the",
    "a",
    "slowly",
    "quickly",
    "scene",
    "frame",
    "camera",
    "view",
    "small",
    "object",
    "shape",
    "is",
    "of",
    "in",
    "on",
    "then",
    "and",
    "moves",
    "video",
    "shot",
    "dark",
    "background",
    "simple",
    "clear",
    "little",
    "steady",
    "now",
    "it",
    "with",
    "its",
    "into",
    "over",
];

pub const VARIANTS_PER_ITEM: usize = 24;

/// `n` paraphrases of `caption`: every caption word repeated one to three
/// times, plus up to four filler words at random positions.
pub fn paraphrases(caption: &str, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<&str> = caption.split_whitespace().collect();
    (0..n)
        .map(|_| {
            let mut words = Vec::new();
            for w in &base {
                for _ in 0..rng.random_range(1..=3) {
                    words.push(*w);
                }
            }
            for _ in 0..rng.random_range(0..=4) {
                let w = FILLER_WORDS.choose(&mut rng).copied().unwrap_or("the");
                let at = rng.random_range(0..=words.len());
                words.insert(at, w);
            }
            words.join(" ")
        })
        .collect()
}

/// Every colour × motion combination, in a fixed order, each with
/// [`VARIANTS_PER_ITEM`] paraphrases.
pub fn moving_squares(arch: &Arch, frames: usize) -> Result<Vec<TrainItem>> {
    let mut out = Vec::new();
    for (ci, color) in CORPUS_COLORS.iter().enumerate() {
        for (mi, motion) in Motion::ALL.iter().enumerate() {
            let video = square_video(arch, frames, color, *motion)?;
            let caption = motion.caption(color);
            let para = paraphrases(&caption, VARIANTS_PER_ITEM, (ci * 16 + mi) as u64);
            out.push(TrainItem::new(&caption, video, arch.text_dim)?.with_variants(&para)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_range() {
        let arch = Arch::toy();
        let items = moving_squares(&arch, 16).unwrap();
        assert_eq!(items.len(), 12);
        for it in &items {
            assert_eq!(it.x1.shape, arch.video_shape(16));
            assert!(it.x1.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn paraphrases_keep_caption_words() {
        let p = paraphrases("A red square falls", 10, 3);
        assert_eq!(p.len(), 10);
        for v in &p {
            let mut it = v.split_whitespace();
            for w in ["A", "red", "square", "falls"] {
                assert!(it.any(|x| x == w), "{v}");
            }
        }
        assert_eq!(p, paraphrases("A red square falls", 10, 3));
    }

    #[test]
    fn falling_square_descends() {
        let (_, y0) = Motion::Falls.center(0.0);
        let (_, y1) = Motion::Falls.center(1.0);
        assert!(y1 > y0);
        assert!(y1 + SQUARE_FRAC / 2.0 <= 1.0 - GROUND_FRAC + 1e-12);
    }
}
