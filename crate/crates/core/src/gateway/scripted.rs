//! Replays a fixture directory:
//!
//! ```text
//! scenario.json        optional: {"prompt": "...", "repeat_last": false}
//! response_000.json    first-frame response
//! response_001.json    perception response when the chain holds 1 image
//! image_000.png        first keyframe
//! image_001.png        edit result when the composite holds 1 image
//! ```
//!
//! Calls are keyed by chain position, which the backend recovers from its
//! arguments, so replay needs no internal state.

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{check_size, check_text, fit, parse_structured, FirstFrameResponse, Gateway, NextFrameResponse, Size};
use crate::chain_model::{load_png, PromptSpec, TextualThought};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioMeta {
    /// When set, the first-frame call checks the prompt against it.
    pub prompt: Option<String>,
    /// Reuse the highest-numbered file once the numbered files run out.
    pub repeat_last: bool,
}

pub struct ScriptedGateway {
    dir: PathBuf,
    meta: ScenarioMeta,
}

pub fn response_file(index: usize) -> String {
    format!("response_{index:03}.json")
}

pub fn image_file(index: usize) -> String {
    format!("image_{index:03}.png")
}

impl ScriptedGateway {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        let meta_path = dir.join("scenario.json");
        let meta = if meta_path.exists() {
            let raw = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            serde_json::from_str(&raw)?
        } else {
            ScenarioMeta::default()
        };
        Ok(Self { dir, meta })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn resolve(&self, name: impl Fn(usize) -> String, index: usize) -> Result<PathBuf> {
        let p = self.dir.join(name(index));
        if p.exists() {
            return Ok(p);
        }
        if self.meta.repeat_last {
            if let Some(last) = (0..index).rev().map(|i| self.dir.join(name(i))).find(|p| p.exists()) {
                return Ok(last);
            }
        }
        Err(Error::Gateway(format!("scripted fixture {} is missing", p.display())))
    }

    fn read_text(&self, index: usize) -> Result<String> {
        let p = self.resolve(response_file, index)?;
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    fn read_image(&self, index: usize, size: Size) -> Result<RgbImage> {
        let p = self.resolve(image_file, index)?;
        Ok(fit(load_png(&p)?, size))
    }
}

impl Gateway for ScriptedGateway {
    fn chat_first_frame(&self, prompt: &PromptSpec) -> Result<FirstFrameResponse> {
        prompt.validate()?;
        if let Some(expected) = &self.meta.prompt {
            if expected != &prompt.text {
                return Err(Error::Gateway(format!(
                    "fixture {} was recorded for prompt {expected:?}, got {:?}",
                    self.dir.display(),
                    prompt.text
                )));
            }
        }
        parse_structured(&self.read_text(0)?, FirstFrameResponse::validate)
    }

    fn generate_image(&self, text: &str, size: Size) -> Result<RgbImage> {
        check_text(text, "image prompt")?;
        check_size(size)?;
        self.read_image(0, size)
    }

    fn perceive_next(
        &self,
        _composite: &RgbImage,
        _consequences: &str,
        _prompt: &PromptSpec,
        chain_txt: &[TextualThought],
    ) -> Result<NextFrameResponse> {
        let k = chain_txt.len().max(1);
        parse_structured(&self.read_text(k)?, NextFrameResponse::validate)
    }

    fn edit_image(&self, composite: &RgbImage, instruction: &str, size: Size) -> Result<RgbImage> {
        check_text(instruction, "edit instruction")?;
        check_size(size)?;
        let k = (composite.width() / size.1).max(1) as usize;
        self.read_image(k, size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::save_png;
    use image::Rgb;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn fixture(dir: &Path, n: usize, repeat_last: bool) {
        write(
            dir,
            "scenario.json",
            &format!("{{\"prompt\": \"A cup falls.\", \"repeat_last\": {repeat_last}}}"),
        );
        write(
            dir,
            &response_file(0),
            r#"{"thoughts": "t", "context_frame": "c", "concise_prompt": "p", "consequences": "q"}"#,
        );
        for i in 0..n {
            save_png(
                &RgbImage::from_pixel(16, 16, Rgb([i as u8, 0, 0])),
                &dir.join(image_file(i)),
            )
            .unwrap();
            if i > 0 {
                write(
                    dir,
                    &response_file(i),
                    &format!("{{\"edit_instruction\": \"frame {i}\", \"is_last\": {}}}", i + 1 == n),
                );
            }
        }
    }

    fn txt(n: usize) -> Vec<TextualThought> {
        (0..n)
            .map(|index| TextualThought {
                index,
                text: "x".into(),
            })
            .collect()
    }

    #[test]
    fn replays_by_position() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), 3, false);
        let g = ScriptedGateway::open(d.path()).unwrap();
        let p = PromptSpec::new("A cup falls.", "cup").unwrap();
        assert_eq!(g.chat_first_frame(&p).unwrap().concise_prompt, "p");
        let img0 = g.generate_image("p", (16, 16)).unwrap();
        assert_eq!(img0, load_png(&d.path().join(image_file(0))).unwrap());
        let r = g.perceive_next(&img0, "q", &p, &txt(2)).unwrap();
        assert_eq!(
            r,
            NextFrameResponse {
                edit_instruction: "frame 2".into(),
                is_last: true
            }
        );
        let wide = RgbImage::new(32, 16);
        assert_eq!(
            g.edit_image(&wide, "frame 2", (16, 16)).unwrap().get_pixel(0, 0),
            &Rgb([2, 0, 0])
        );
        assert!(g.perceive_next(&img0, "q", &p, &txt(3)).is_err());
        assert!(g.edit_image(&wide, "", (16, 16)).is_err());
    }

    #[test]
    fn prompt_mismatch_and_repeat_last() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), 2, true);
        let g = ScriptedGateway::open(d.path()).unwrap();
        let other = PromptSpec::new("Something else.", "cup").unwrap();
        assert!(matches!(g.chat_first_frame(&other), Err(Error::Gateway(_))));
        let img = RgbImage::new(16, 16);
        let p = PromptSpec::new("A cup falls.", "cup").unwrap();
        assert_eq!(
            g.perceive_next(&img, "q", &p, &txt(9)).unwrap().edit_instruction,
            "frame 1"
        );
        assert!(g.edit_image(&RgbImage::new(160, 16), "go", (16, 16)).is_ok());
    }

    #[test]
    fn missing_dir_is_config_error() {
        assert!(matches!(
            ScriptedGateway::open("/nonexistent/fixtures/x"),
            Err(Error::Config(_))
        ));
    }
}
