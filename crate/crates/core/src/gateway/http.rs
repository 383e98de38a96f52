//! OpenAI-compatible HTTP backend: `chat/completions` with strict JSON-schema
//! responses, `images/generations` and multipart `images/edits`.

use std::io::Cursor;
use std::time::{Duration, Instant};

use base64::Engine;
use image::{ImageFormat, RgbImage};
use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use serde_json::{json, Value};

use super::templates::{first_frame_format, first_frame_user, next_frame_format, next_frame_user};
use super::templates::{FIRST_FRAME_SYSTEM, NEXT_FRAME_SYSTEM};
use super::{check_size, check_text, fit, parse_structured, BackendConfig, FirstFrameResponse, Gateway};
use super::{NextFrameResponse, Size};
use crate::chain_model::{PromptSpec, TextualThought};
use crate::error::{Error, Result};

const FIRST_BACKOFF: Duration = Duration::from_millis(500);
const LOG_LIMIT: usize = 2000;

pub struct HttpGateway {
    client: Client,
    endpoint: String,
    api_key: String,
    max_retries: u32,
    timeout: Duration,
    chat_model: String,
    image_model: String,
}

impl std::fmt::Debug for HttpGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpGateway")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"[redacted]")
            .field("max_retries", &self.max_retries)
            .field("timeout", &self.timeout)
            .finish()
    }
}

enum Failure {
    Transient(String),
    Fatal(String),
}

fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn data_url(img: &RgbImage) -> Result<String> {
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png_bytes(img)?)
    ))
}

impl HttpGateway {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let var = cfg.api_key_env.clone().unwrap_or_default();
        let api_key =
            std::env::var(&var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?;
        let endpoint = cfg
            .endpoint
            .clone()
            .unwrap_or_default()
            .trim_end_matches('/')
            .to_string();
        let client = Client::builder()
            .build()
            .map_err(|e| Error::Gateway(format!("cannot build http client: {e}")))?;
        Ok(Self {
            client,
            endpoint,
            api_key,
            max_retries: cfg.max_retries,
            timeout: Duration::from_secs_f64(cfg.timeout_s),
            chat_model: cfg.chat_model.clone(),
            image_model: cfg.image_model.clone(),
        })
    }

    fn redact(&self, text: &str) -> String {
        let mut s = if self.api_key.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.api_key, "[redacted]")
        };
        if s.len() > LOG_LIMIT {
            let mut cut = LOG_LIMIT;
            while !s.is_char_boundary(cut) {
                cut -= 1;
            }
            s.truncate(cut);
            s.push_str("...");
        }
        s
    }

    /// Sends with retries. The whole call, backoff included, stays within
    /// `timeout × (max_retries + 1)`.
    fn send(&self, path: &str, log_body: &str, build: impl Fn() -> Result<RequestBuilder>) -> Result<Value> {
        let url = format!("{}/{path}", self.endpoint);
        let deadline = Instant::now() + self.timeout * (self.max_retries + 1);
        tracing::debug!(url = %url, body = %self.redact(log_body), "request");
        let mut backoff = FIRST_BACKOFF;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            let req = build()?.bearer_auth(&self.api_key).timeout(self.timeout.min(left));
            match self.classify(req.send()) {
                Ok(v) => {
                    tracing::debug!(url = %url, body = %self.redact(&v.to_string()), "response");
                    return Ok(v);
                }
                Err(Failure::Fatal(m)) => return Err(Error::Gateway(format!("{path}: {m}"))),
                Err(Failure::Transient(m)) => {
                    tracing::warn!(attempt, "{path}: {m}");
                    last = m;
                }
            }
            if attempt < self.max_retries {
                let left = deadline.saturating_duration_since(Instant::now());
                std::thread::sleep(backoff.min(left));
                backoff *= 2;
            }
        }
        Err(Error::Gateway(format!(
            "{path}: giving up after {} attempt(s): {last}",
            self.max_retries + 1
        )))
    }

    fn classify(&self, r: reqwest::Result<Response>) -> std::result::Result<Value, Failure> {
        let resp = r.map_err(|e| Failure::Transient(self.redact(&e.to_string())))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Transient(format!("status {status}: {}", self.redact(&text))));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("status {status}: {}", self.redact(&text))));
        }
        serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("response is not JSON: {e}")))
    }

    fn chat(&self, system: &str, user: Value, format: Value) -> Result<String> {
        let body = json!({
            "model": self.chat_model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "response_format": format,
        });
        let v = self.send("chat/completions", &body.to_string(), || {
            Ok(self
                .client
                .post(format!("{}/chat/completions", self.endpoint))
                .json(&body))
        })?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Schema {
                message: "chat response has no message content".into(),
                raw: v.to_string(),
            })
    }

    /// One re-request on a schema failure.
    fn structured<T: serde::de::DeserializeOwned>(
        &self,
        call: impl Fn() -> Result<String>,
        validate: impl Fn(&T) -> Result<()> + Copy,
    ) -> Result<T> {
        match call().and_then(|raw| parse_structured(&raw, validate)) {
            Err(Error::Schema { message, .. }) => {
                tracing::warn!("schema failure, re-requesting: {message}");
                parse_structured(&call()?, validate)
            }
            other => other,
        }
    }

    fn decode_image(&self, v: &Value, size: Size) -> Result<RgbImage> {
        let b64 = v
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Gateway("image response has no data[0].b64_json".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| Error::Gateway(format!("bad base64 image: {e}")))?;
        let img = image::load_from_memory(&bytes)?.to_rgb8();
        Ok(fit(img, size))
    }
}

impl Gateway for HttpGateway {
    fn chat_first_frame(&self, prompt: &PromptSpec) -> Result<FirstFrameResponse> {
        prompt.validate()?;
        let user = Value::String(first_frame_user(prompt));
        self.structured(
            || self.chat(FIRST_FRAME_SYSTEM, user.clone(), first_frame_format()),
            FirstFrameResponse::validate,
        )
    }

    fn generate_image(&self, text: &str, size: Size) -> Result<RgbImage> {
        check_text(text, "image prompt")?;
        check_size(size)?;
        let body = json!({
            "model": self.image_model,
            "prompt": text,
            "n": 1,
            "size": format!("{}x{}", size.1, size.0),
            "response_format": "b64_json",
        });
        let v = self.send("images/generations", &body.to_string(), || {
            Ok(self
                .client
                .post(format!("{}/images/generations", self.endpoint))
                .json(&body))
        })?;
        self.decode_image(&v, size)
    }

    fn perceive_next(
        &self,
        composite: &RgbImage,
        consequences: &str,
        prompt: &PromptSpec,
        chain_txt: &[TextualThought],
    ) -> Result<NextFrameResponse> {
        let user = json!([
            {"type": "text", "text": next_frame_user(prompt, consequences, chain_txt)},
            {"type": "image_url", "image_url": {"url": data_url(composite)?}},
        ]);
        self.structured(
            || self.chat(NEXT_FRAME_SYSTEM, user.clone(), next_frame_format()),
            NextFrameResponse::validate,
        )
    }

    fn edit_image(&self, composite: &RgbImage, instruction: &str, size: Size) -> Result<RgbImage> {
        check_text(instruction, "edit instruction")?;
        check_size(size)?;
        let png = png_bytes(composite)?;
        let size_s = format!("{}x{}", size.1, size.0);
        let log = format!("prompt={instruction:?} size={size_s} image=<{} bytes>", png.len());
        let v = self.send("images/edits", &log, || {
            let part = multipart::Part::bytes(png.clone())
                .file_name("chain.png")
                .mime_str("image/png")
                .map_err(|e| Error::Gateway(e.to_string()))?;
            let form = multipart::Form::new()
                .text("model", self.image_model.clone())
                .text("prompt", instruction.to_string())
                .text("size", size_s.clone())
                .text("response_format", "b64_json")
                .part("image", part);
            Ok(self
                .client
                .post(format!("{}/images/edits", self.endpoint))
                .multipart(form))
        })?;
        self.decode_image(&v, size)
    }
}
