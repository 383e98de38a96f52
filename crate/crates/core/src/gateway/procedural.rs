//! Keyword-driven backend that draws flat 2-D scenes. It understands a
//! coloured object that either falls to the ground (3 key moments) or rolls
//! across it (5 key moments). Every caption names its own stage, so images can
//! be redrawn from text alone.

use image::RgbImage;

use super::{check_size, check_text, FirstFrameResponse, Gateway, NextFrameResponse, Size};
use crate::chain_model::{PromptSpec, TextualThought};
use crate::error::Result;
use crate::scene::{named_color, Color, Scene, Shape, ShapeKind, GROUND};

pub const SKY: Color = [60, 90, 150];
pub const GROUND_FRAC: f64 = 0.125;
pub const RADIUS: f64 = 0.11;
/// Gap between the object and the frame edge at the first stage.
const MARGIN: f64 = 1.0 / 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Fall,
    Roll,
}

const FALL_STAGES: [(f64, &str); 3] = [
    (0.0, "at the top of the frame"),
    (0.5, "halfway down the frame"),
    (1.0, "resting on the ground"),
];

const ROLL_STAGES: [(f64, &str); 5] = [
    (0.0, "at the left edge of the ground"),
    (0.25, "a quarter of the way across the ground"),
    (0.5, "in the middle of the ground"),
    (0.75, "three quarters of the way across the ground"),
    (1.0, "at the right edge of the ground"),
];

impl Motion {
    pub fn stages(self) -> &'static [(f64, &'static str)] {
        match self {
            Motion::Fall => &FALL_STAGES,
            Motion::Roll => &ROLL_STAGES,
        }
    }
}

const ROUND_NOUNS: [&str; 6] = ["ball", "egg", "rock", "stone", "apple", "orange"];
const BOX_NOUNS: [&str; 4] = ["box", "brick", "cube", "crate"];

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub color_name: String,
    pub color: Color,
    pub noun: String,
    pub kind: ShapeKind,
    pub motion: Motion,
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Stage named in `text`, checked longest phrase first.
fn find_stage(text: &str) -> Option<(Motion, usize)> {
    let lower = text.to_lowercase();
    let mut all: Vec<(Motion, usize, &str)> = Vec::new();
    for m in [Motion::Fall, Motion::Roll] {
        all.extend(m.stages().iter().enumerate().map(|(i, (_, s))| (m, i, *s)));
    }
    all.sort_by_key(|(_, _, s)| std::cmp::Reverse(s.len()));
    all.into_iter()
        .find(|(_, _, s)| lower.contains(s))
        .map(|(m, i, _)| (m, i))
}

impl Subject {
    pub fn parse(text: &str) -> Self {
        let ws = words(text);
        let (color_name, color) = ws
            .iter()
            .find_map(|w| named_color(w).map(|c| (w.clone(), c)))
            .unwrap_or_else(|| ("white".into(), named_color("white").unwrap_or([245, 245, 245])));
        let singular = |w: &str| w.strip_suffix('s').unwrap_or(w).to_string();
        let (noun, kind) = ws
            .iter()
            .find_map(|w| {
                let s = singular(w);
                if ROUND_NOUNS.contains(&w.as_str()) || ROUND_NOUNS.contains(&s.as_str()) {
                    Some((s, ShapeKind::Disk))
                } else if BOX_NOUNS.contains(&s.as_str()) || w == "boxes" {
                    Some((if w == "boxes" { "box".into() } else { s }, ShapeKind::Rect))
                } else {
                    None
                }
            })
            .unwrap_or_else(|| ("ball".into(), ShapeKind::Disk));
        let motion = find_stage(text).map(|(m, _)| m).unwrap_or_else(|| {
            if ws.iter().any(|w| w.starts_with("roll") || w.starts_with("slid")) {
                Motion::Roll
            } else {
                Motion::Fall
            }
        });
        Self {
            color_name,
            color,
            noun,
            kind,
            motion,
        }
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.color_name, self.noun)
    }

    pub fn caption(&self, stage: usize) -> String {
        let phrase = self.motion.stages()[stage].1;
        if stage == 0 {
            format!("A {} {phrase}.", self.name())
        } else {
            format!("The {} is {phrase}.", self.name())
        }
    }

    pub fn scene(&self, p: f64) -> Scene {
        subject_scene(self.kind, self.color, self.motion, p)
    }
}

/// Object centre at progress `p` in [0, 1].
pub fn track_center(motion: Motion, p: f64) -> (f64, f64) {
    let rest = 1.0 - GROUND_FRAC - RADIUS;
    match motion {
        Motion::Fall => {
            let top = MARGIN + RADIUS;
            (0.5, top + p * (rest - top))
        }
        Motion::Roll => {
            let left = MARGIN + RADIUS;
            (left + p * (1.0 - 2.0 * left), rest)
        }
    }
}

pub fn subject_scene(kind: ShapeKind, color: Color, motion: Motion, p: f64) -> Scene {
    let mut s = Scene::new(SKY).with_ground(GROUND_FRAC, GROUND);
    let (cx, cy) = track_center(motion, p.clamp(0.0, 1.0));
    s.push(Shape {
        kind,
        cx,
        cy,
        w: 2.0 * RADIUS,
        h: 2.0 * RADIUS,
        color,
    });
    s
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProceduralGateway;

impl ProceduralGateway {
    fn draw(&self, text: &str, size: Size) -> RgbImage {
        let subject = Subject::parse(text);
        let stage = find_stage(text).map(|(_, i)| i).unwrap_or(0);
        let p = subject.motion.stages()[stage].0;
        subject.scene(p).render(size.1, size.0)
    }
}

impl Gateway for ProceduralGateway {
    fn chat_first_frame(&self, prompt: &PromptSpec) -> Result<FirstFrameResponse> {
        prompt.validate()?;
        let s = Subject::parse(&prompt.text);
        let name = s.name();
        let (thoughts, consequences) = match s.motion {
            Motion::Fall => (
                format!("The {name} starts high in the frame and descends under gravity until it rests on the ground."),
                format!("The {name} descends steadily and comes to rest on the ground."),
            ),
            Motion::Roll => (
                format!("The {name} sits on the ground at the left and rolls steadily to the right."),
                format!("The {name} rolls across the ground and stops at the right edge."),
            ),
        };
        Ok(FirstFrameResponse {
            thoughts,
            context_frame: format!("{} Blue sky above grey ground.", s.caption(0)),
            concise_prompt: s.caption(0),
            consequences,
        })
    }

    fn generate_image(&self, text: &str, size: Size) -> Result<RgbImage> {
        check_text(text, "image prompt")?;
        check_size(size)?;
        Ok(self.draw(text, size))
    }

    fn perceive_next(
        &self,
        _composite: &RgbImage,
        _consequences: &str,
        prompt: &PromptSpec,
        chain_txt: &[TextualThought],
    ) -> Result<NextFrameResponse> {
        let s = Subject::parse(&prompt.text);
        let n = s.motion.stages().len();
        let k = chain_txt.len().clamp(1, n - 1);
        Ok(NextFrameResponse {
            edit_instruction: s.caption(k),
            is_last: k == n - 1,
        })
    }

    fn edit_image(&self, _composite: &RgbImage, instruction: &str, size: Size) -> Result<RgbImage> {
        check_text(instruction, "edit instruction")?;
        check_size(size)?;
        Ok(self.draw(instruction, size))
    }
}
