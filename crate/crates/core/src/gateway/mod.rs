//! The four multimodal primitives the reasoning loop needs, behind one trait,
//! with live HTTP, scripted-fixture and procedural backends.

mod compose;
pub mod http;
pub mod procedural;
pub mod scripted;
pub mod templates;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::chain_model::{PromptSpec, TextualThought};
use crate::error::{ensure, Error, Result};

pub use compose::compose_chain_image;

/// Structured answer to the first-frame request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstFrameResponse {
    pub thoughts: String,
    pub context_frame: String,
    pub concise_prompt: String,
    pub consequences: String,
}

impl FirstFrameResponse {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("thoughts", &self.thoughts),
            ("context_frame", &self.context_frame),
            ("concise_prompt", &self.concise_prompt),
            ("consequences", &self.consequences),
        ] {
            ensure(!v.trim().is_empty(), || format!("first-frame field {name} is empty"))?;
        }
        Ok(())
    }
}

/// Structured answer to a perception request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextFrameResponse {
    pub edit_instruction: String,
    pub is_last: bool,
}

impl NextFrameResponse {
    pub fn validate(&self) -> Result<()> {
        ensure(!self.edit_instruction.trim().is_empty(), || {
            "next-frame edit_instruction is empty".into()
        })
    }
}

/// Parses and validates a structured payload, keeping the raw text on failure.
pub fn parse_structured<T: serde::de::DeserializeOwned>(raw: &str, validate: impl Fn(&T) -> Result<()>) -> Result<T> {
    let value: T = serde_json::from_str(raw).map_err(|e| Error::Schema {
        message: e.to_string(),
        raw: raw.to_string(),
    })?;
    validate(&value).map_err(|e| Error::Schema {
        message: e.to_string(),
        raw: raw.to_string(),
    })?;
    Ok(value)
}

/// Image size as `(height, width)`.
pub type Size = (u32, u32);

/// Implementations hold no per-run state, so one instance may serve
/// independent runs concurrently.
pub trait Gateway: Send + Sync {
    fn chat_first_frame(&self, prompt: &PromptSpec) -> Result<FirstFrameResponse>;

    fn generate_image(&self, text: &str, size: Size) -> Result<RgbImage>;

    fn perceive_next(
        &self,
        composite: &RgbImage,
        consequences: &str,
        prompt: &PromptSpec,
        chain_txt: &[TextualThought],
    ) -> Result<NextFrameResponse>;

    fn edit_image(&self, composite: &RgbImage, instruction: &str, size: Size) -> Result<RgbImage>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Scripted,
    Procedural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.example.com/v1`.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub timeout_s: f64,
    pub chat_model: String,
    pub image_model: String,
    /// Directory holding one sub-directory of fixtures per scenario.
    pub fixture_root: PathBuf,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            api_key_env: None,
            max_retries: 2,
            timeout_s: 120.0,
            chat_model: "gpt-4o".into(),
            image_model: "gpt-image-1".into(),
            fixture_root: PathBuf::from("fixtures"),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.max_retries > 5 {
            return cfg(format!("max_retries {} is outside [0, 5]", self.max_retries));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return cfg(format!("timeout_s {} must be positive", self.timeout_s));
        }
        if self.kind == BackendKind::Http {
            if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return cfg("the http backend needs an endpoint".into());
            }
            if self.api_key_env.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return cfg("the http backend needs api_key_env".into());
            }
        }
        Ok(())
    }

    /// Upper bound on the wall-clock time of one logical call.
    pub fn call_budget_s(&self) -> f64 {
        self.timeout_s * (self.max_retries as f64 + 1.0)
    }
}

/// Builds the backend for one scenario.
pub fn build_gateway(cfg: &BackendConfig, scenario_id: &str) -> Result<Box<dyn Gateway>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Http => Box::new(http::HttpGateway::from_config(cfg)?),
        BackendKind::Scripted => Box::new(scripted::ScriptedGateway::open(cfg.fixture_root.join(scenario_id))?),
        BackendKind::Procedural => Box::new(procedural::ProceduralGateway),
    })
}

/// Per-primitive call counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub chat: usize,
    pub generate: usize,
    pub perception: usize,
    pub edit: usize,
}

/// Wraps a gateway and counts calls to each primitive.
pub struct Counting<'a> {
    inner: &'a dyn Gateway,
    chat: AtomicUsize,
    generate: AtomicUsize,
    perception: AtomicUsize,
    edit: AtomicUsize,
}

impl<'a> Counting<'a> {
    pub fn new(inner: &'a dyn Gateway) -> Self {
        Self {
            inner,
            chat: AtomicUsize::new(0),
            generate: AtomicUsize::new(0),
            perception: AtomicUsize::new(0),
            edit: AtomicUsize::new(0),
        }
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            chat: self.chat.load(Ordering::Relaxed),
            generate: self.generate.load(Ordering::Relaxed),
            perception: self.perception.load(Ordering::Relaxed),
            edit: self.edit.load(Ordering::Relaxed),
        }
    }
}

fn bump(c: &AtomicUsize) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl Gateway for Counting<'_> {
    fn chat_first_frame(&self, prompt: &PromptSpec) -> Result<FirstFrameResponse> {
        bump(&self.chat);
        self.inner.chat_first_frame(prompt)
    }

    fn generate_image(&self, text: &str, size: Size) -> Result<RgbImage> {
        bump(&self.generate);
        self.inner.generate_image(text, size)
    }

    fn perceive_next(
        &self,
        composite: &RgbImage,
        consequences: &str,
        prompt: &PromptSpec,
        chain_txt: &[TextualThought],
    ) -> Result<NextFrameResponse> {
        bump(&self.perception);
        self.inner.perceive_next(composite, consequences, prompt, chain_txt)
    }

    fn edit_image(&self, composite: &RgbImage, instruction: &str, size: Size) -> Result<RgbImage> {
        bump(&self.edit);
        self.inner.edit_image(composite, instruction, size)
    }
}

pub(crate) fn check_text(text: &str, what: &str) -> Result<()> {
    ensure(!text.trim().is_empty(), || format!("{what} must not be empty"))
}

pub fn check_size(size: Size) -> Result<()> {
    let m = crate::chain_model::MIN_IMAGE_EDGE;
    ensure(size.0 >= m && size.1 >= m, || {
        format!("image size {}x{} is below the {m}px minimum", size.0, size.1)
    })
}

/// Resizes to `size` when needed.
pub(crate) fn fit(img: RgbImage, size: Size) -> RgbImage {
    if img.height() == size.0 && img.width() == size.1 {
        img
    } else {
        image::imageops::resize(&img, size.1, size.0, image::imageops::FilterType::Triangle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn http_config_requirements() {
        let mut c = BackendConfig {
            kind: BackendKind::Http,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.endpoint = Some("http://localhost:1".into());
        assert!(c.validate().is_err());
        c.api_key_env = Some("KEY".into());
        c.validate().unwrap();
        c.max_retries = 6;
        assert!(c.validate().is_err());
    }

    #[test]
    fn schema_errors_keep_payload() {
        let err = parse_structured::<NextFrameResponse>("{\"edit_instruction\": 1}", NextFrameResponse::validate)
            .unwrap_err();
        match err {
            Error::Schema { raw, .. } => assert!(raw.contains("edit_instruction")),
            e => panic!("{e}"),
        }
        let err = parse_structured::<NextFrameResponse>(
            "{\"edit_instruction\": \" \", \"is_last\": true}",
            NextFrameResponse::validate,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }
}
