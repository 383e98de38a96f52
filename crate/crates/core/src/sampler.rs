//! Composite prompt construction, video rendering and export.

use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::imageops::FilterType;
use image::{Delay, Frame, RgbImage};

use crate::chain_model::{save_png, TextualThought};
use crate::error::{ensure, Error, Result};
use crate::generator::checkpoint::{load_adapters, load_base};
use crate::generator::flow::VelocityField;
use crate::generator::net::VelocityNet;
use crate::generator::sample::euler_sample;
use crate::generator::tensor::{VideoShape, VideoTensor};
use crate::generator::text::encode_text;
use crate::lora::AdaptedParams;

pub const PREVIEW_GIF: &str = "preview.gif";
const PREVIEW_SCALE: u32 = 4;
const PREVIEW_DELAY_MS: u32 = 120;

/// Captions in chain order, joined with single spaces.
pub fn concat_prompts(chain_txt: &[TextualThought]) -> Result<String> {
    ensure(!chain_txt.is_empty(), || "no captions to concatenate".into())?;
    Ok(chain_txt.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "))
}

pub fn frame_file_name(f: usize) -> String {
    format!("frame_{f:04}.png")
}

/// Base weights, optionally with adapters.
pub enum SamplingParams {
    Base(VelocityNet),
    Adapted(AdaptedParams),
}

impl SamplingParams {
    pub fn field(&self) -> &dyn VelocityField {
        match self {
            SamplingParams::Base(n) => n,
            SamplingParams::Adapted(p) => p,
        }
    }

    pub fn net(&self) -> &VelocityNet {
        match self {
            SamplingParams::Base(n) => n,
            SamplingParams::Adapted(p) => &p.base,
        }
    }
}

/// Loads the checkpoints the sampler renders from; a missing file is a
/// configuration error.
pub fn load_sampling_params(base_ckpt: &Path, adapter_ckpt: Option<&Path>) -> Result<SamplingParams> {
    for p in std::iter::once(base_ckpt).chain(adapter_ckpt) {
        if !p.is_file() {
            return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
        }
    }
    let base = load_base(base_ckpt)?;
    Ok(match adapter_ckpt {
        None => SamplingParams::Base(base),
        Some(a) => SamplingParams::Adapted(load_adapters(a, base)?),
    })
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub video: VideoTensor,
    pub frames: Vec<PathBuf>,
    pub preview: PathBuf,
}

/// Samples a video for `prompt` and exports it into `out_dir`.
pub fn render(
    field: &dyn VelocityField,
    prompt: &str,
    text_dim: usize,
    shape: VideoShape,
    steps: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<RenderOutput> {
    let c = encode_text(prompt, text_dim)?;
    let video = euler_sample(field, &c, shape, steps, seed)?;
    export_video(&video, out_dir)
}

/// Writes clamped frames as `frame_%04d.png` plus an upscaled looping GIF.
pub fn export_video(video: &VideoTensor, out_dir: &Path) -> Result<RenderOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let clamped = video.clamped();
    let mut images = Vec::with_capacity(clamped.shape.frames);
    let mut frames = Vec::with_capacity(clamped.shape.frames);
    for f in 0..clamped.shape.frames {
        let img = clamped.frame_to_image(f)?;
        let path = out_dir.join(frame_file_name(f));
        save_png(&img, &path)?;
        frames.push(path);
        images.push(img);
    }
    let preview = out_dir.join(PREVIEW_GIF);
    write_gif(&images, &preview)?;
    Ok(RenderOutput {
        video: clamped,
        frames,
        preview,
    })
}

fn write_gif(images: &[RgbImage], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GifEncoder::new(std::io::BufWriter::new(file));
    enc.set_repeat(Repeat::Infinite)?;
    for img in images {
        let big = image::imageops::resize(
            img,
            img.width() * PREVIEW_SCALE,
            img.height() * PREVIEW_SCALE,
            FilterType::Nearest,
        );
        let rgba = image::DynamicImage::ImageRgb8(big).to_rgba8();
        enc.encode_frame(Frame::from_parts(
            rgba,
            0,
            0,
            Delay::from_numer_denom_ms(PREVIEW_DELAY_MS, 1),
        ))?;
    }
    Ok(())
}

/// Per-pixel linear crossfade through `keyframes` (one-frame videos of the
/// target frame size), spread evenly over `frames` frames.
pub fn crossfade(keyframes: &[VideoTensor], frames: usize) -> Result<VideoTensor> {
    ensure(!keyframes.is_empty() && frames >= 1, || {
        "crossfade needs keyframes and frames".into()
    })?;
    let s = keyframes[0].shape;
    ensure(keyframes.iter().all(|k| k.shape == s && s.frames == 1), || {
        "crossfade keyframes must be one-frame videos of one size".into()
    })?;
    let shape = VideoShape::new(frames, s.height, s.width, s.channels);
    let n = keyframes.len();
    let mut data = Vec::with_capacity(shape.numel());
    for f in 0..frames {
        let pos = if frames == 1 {
            0.0
        } else {
            f as f64 * (n - 1) as f64 / (frames - 1) as f64
        };
        let i = (pos.floor() as usize).min(n - 1);
        let j = (i + 1).min(n - 1);
        let w = pos - i as f64;
        data.extend(
            keyframes[i]
                .data
                .iter()
                .zip(&keyframes[j].data)
                .map(|(a, b)| (1.0 - w) * a + w * b),
        );
    }
    VideoTensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::load_png;

    fn txt(v: &[&str]) -> Vec<TextualThought> {
        v.iter()
            .enumerate()
            .map(|(index, t)| TextualThought {
                index,
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn concat_cases() {
        assert_eq!(concat_prompts(&txt(&["a"])).unwrap(), "a");
        let parts = ["A cup.", "It tips over.", "Water spills, everywhere."];
        let joined = concat_prompts(&txt(&parts)).unwrap();
        assert_eq!(
            joined.len(),
            parts.iter().map(|p| p.len()).sum::<usize>() + parts.len() - 1
        );
        assert!(concat_prompts(&[]).is_err());
    }

    #[test]
    fn export_reload_within_quantization() {
        let d = tempfile::tempdir().unwrap();
        let shape = VideoShape::new(3, 8, 8, 3);
        let zero = |_: &VideoTensor, _: f64, _: &_| Ok(VideoTensor::zeros(shape));
        let out = render(&zero, "a ball", 16, shape, 4, 11, d.path()).unwrap();
        assert_eq!(out.frames.len(), 3);
        assert!(out.preview.is_file());
        for (f, p) in out.frames.iter().enumerate() {
            let back = VideoTensor::from_frames(&[load_png(p).unwrap()]).unwrap();
            for (a, b) in back.data.iter().zip(out.video.frame(f)) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn single_frame_video() {
        let d = tempfile::tempdir().unwrap();
        let shape = VideoShape::new(1, 8, 8, 3);
        let zero = |_: &VideoTensor, _: f64, _: &_| Ok(VideoTensor::zeros(shape));
        let out = render(&zero, "x", 16, shape, 2, 0, d.path()).unwrap();
        assert_eq!(out.frames.len(), 1);
        assert_eq!(
            std::fs::read_dir(d.path())
                .unwrap()
                .filter(|e| { e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png") })
                .count(),
            1
        );
    }

    #[test]
    fn crossfade_hits_keyframes() {
        let s = VideoShape::new(1, 2, 2, 3);
        let k: Vec<VideoTensor> = [-1.0, 0.0, 1.0].iter().map(|v| VideoTensor::filled(s, *v)).collect();
        let v = crossfade(&k, 5).unwrap();
        let firsts: Vec<f64> = (0..5).map(|f| v.frame(f)[0]).collect();
        assert_eq!(firsts, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn missing_checkpoint_is_config_error() {
        assert!(matches!(
            load_sampling_params(Path::new("/nonexistent/base.ckpt"), None),
            Err(Error::Config(_))
        ));
    }
}
