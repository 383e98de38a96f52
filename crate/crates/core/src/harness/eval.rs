//! Proxy metrics computed from a run directory's artifacts: keyframe affinity
//! at anchor frames, monotonicity of a tracked feature, and smoothness.

use std::path::Path;

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::catalog::{Direction, Feature};
use crate::chain_model::{load_png, read_tuning_csv, write_json_pretty};
use crate::error::{ensure, validation, Error, Result};
use crate::generator::tensor::{mean_sq_diff, VideoTensor};

pub const EVAL_JSON: &str = "eval.json";
pub const SCENARIO_JSON: &str = "scenario.json";

/// Blurred luminance above this (in [0, 1]) counts as bright.
pub const BRIGHT_LEVEL: f64 = 0.7;
/// Blurred luminance below this counts as dark.
pub const DARK_LEVEL: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub anchors: Vec<usize>,
    pub keyframe_affinity: Vec<f64>,
    pub mean_affinity: f64,
    pub feature: Feature,
    pub direction: Direction,
    pub feature_values: Vec<f64>,
    pub monotonicity_score: f64,
    pub smoothness: f64,
}

/// What `eval` needs to know about the scenario, stored in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScenario {
    pub id: String,
    pub prompt: String,
    pub feature: Feature,
    pub direction: Direction,
}

/// Keyframe `i` of `n` lands on frame `round(i·T/(n−1))`, `T = frames − 1`.
pub fn default_anchors(n: usize, frames: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![0; n];
    }
    let t = frames.saturating_sub(1) as f64;
    (0..n)
        .map(|i| (i as f64 * t / (n - 1) as f64).round() as usize)
        .collect()
}

/// Channel-mean luminance in [0, 1], 3×3 box-blurred with clamped edges.
fn blurred_luminance(frame: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let lum: Vec<f64> = frame
        .chunks_exact(c)
        .map(|px| (px.iter().sum::<f64>() / c as f64 + 1.0) / 2.0)
        .collect();
    let at = |y: i64, x: i64| lum[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize];
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += at(y + dy, x + dx);
                }
            }
            out[y as usize * w + x as usize] = s / 9.0;
        }
    }
    out
}

/// Feature of frame `f`. Centroid features are NaN when nothing is bright.
pub fn feature_value(video: &VideoTensor, f: usize, feature: Feature) -> f64 {
    let s = video.shape;
    let lum = blurred_luminance(video.frame(f), s.height, s.width, s.channels);
    let n = lum.len() as f64;
    let bright = || {
        lum.iter()
            .enumerate()
            .filter(|(_, v)| **v > BRIGHT_LEVEL)
            .map(|(i, _)| i)
    };
    match feature {
        Feature::MeanLuminance => lum.iter().sum::<f64>() / n,
        Feature::BrightArea => bright().count() as f64 / n,
        Feature::DarkArea => lum.iter().filter(|v| **v < DARK_LEVEL).count() as f64 / n,
        Feature::CentroidHeight | Feature::CentroidX => {
            let (mut sum, mut k) = (0.0, 0usize);
            for i in bright() {
                sum += if feature == Feature::CentroidX {
                    (i % s.width) as f64 + 0.5
                } else {
                    (i / s.width) as f64 + 0.5
                };
                k += 1;
            }
            if k == 0 {
                return f64::NAN;
            }
            let mean = sum / k as f64;
            match feature {
                Feature::CentroidX => mean / s.width as f64,
                _ => 1.0 - mean / s.height as f64,
            }
        }
    }
}

/// Fraction of consecutive pairs that move strictly in `direction`. Pairs
/// with an undefined value count as not moving.
pub fn monotonicity(values: &[f64], direction: Direction) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let good = values
        .windows(2)
        .filter(|w| match direction {
            Direction::Increasing => w[1] > w[0],
            Direction::Decreasing => w[1] < w[0],
        })
        .count();
    good as f64 / (values.len() - 1) as f64
}

/// Mean absolute difference between consecutive frames.
pub fn smoothness(video: &VideoTensor) -> f64 {
    let f = video.shape.frames;
    if f < 2 {
        return 0.0;
    }
    let total: f64 = (1..f)
        .map(|k| {
            let (a, b) = (video.frame(k - 1), video.frame(k));
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        })
        .sum();
    total / (f - 1) as f64
}

/// Metrics for `video` against one-frame `keyframes` of the same frame size.
pub fn evaluate(
    video: &VideoTensor,
    keyframes: &[VideoTensor],
    anchors: &[usize],
    feature: Feature,
    direction: Direction,
) -> Result<EvalReport> {
    ensure(anchors.len() == keyframes.len(), || {
        format!("{} anchors for {} keyframes", anchors.len(), keyframes.len())
    })?;
    let frames = video.shape.frames;
    let mut keyframe_affinity = Vec::with_capacity(anchors.len());
    for (&a, k) in anchors.iter().zip(keyframes) {
        ensure(a < frames, || format!("anchor {a} is outside the {frames}-frame video"))?;
        ensure(k.shape.frame_len() == video.shape.frame_len(), || {
            "keyframe and video frame sizes differ".into()
        })?;
        keyframe_affinity.push(mean_sq_diff(video.frame(a), &k.data));
    }
    let feature_values: Vec<f64> = (0..frames).map(|f| feature_value(video, f, feature)).collect();
    let mean_affinity = if keyframe_affinity.is_empty() {
        0.0
    } else {
        keyframe_affinity.iter().sum::<f64>() / keyframe_affinity.len() as f64
    };
    Ok(EvalReport {
        anchors: anchors.to_vec(),
        mean_affinity,
        keyframe_affinity,
        feature,
        direction,
        monotonicity_score: monotonicity(&feature_values, direction),
        feature_values,
        smoothness: smoothness(video),
    })
}

/// Loads `video/frame_*.png` in order.
pub fn load_video(dir: &Path) -> Result<VideoTensor> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        })
        .collect();
    paths.sort();
    ensure(!paths.is_empty(), || format!("no frames in {}", dir.display()))?;
    let frames = paths.iter().map(|p| load_png(p)).collect::<Result<Vec<_>>>()?;
    VideoTensor::from_frames(&frames)
}

/// Keyframes listed in the tuning CSV, resized to `(h, w)`.
pub fn load_keyframes(thoughts: &Path, h: u32, w: u32) -> Result<Vec<VideoTensor>> {
    let pairs = read_tuning_csv(&thoughts.join(crate::reasoner::METADATA_CSV))?;
    pairs
        .iter()
        .map(|p| {
            let img = load_png(&thoughts.join(&p.file_name))?;
            let img = if img.dimensions() == (w, h) {
                img
            } else {
                image::imageops::resize(&img, w, h, FilterType::Triangle)
            };
            VideoTensor::from_frames(&[img])
        })
        .collect()
}

/// Evaluates a finished run and writes `eval.json` into it.
pub fn eval_run(run_dir: &Path, anchors: Option<&[usize]>) -> Result<EvalReport> {
    let sc_path = run_dir.join(SCENARIO_JSON);
    let raw = std::fs::read_to_string(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
    let sc: RunScenario = serde_json::from_str(&raw)?;
    let video = load_video(&run_dir.join("video"))?;
    let s = video.shape;
    let thoughts = run_dir.join("thoughts");
    // t2v runs have no keyframes to compare against.
    let keys = if thoughts.join(crate::reasoner::METADATA_CSV).is_file() {
        load_keyframes(&thoughts, s.height as u32, s.width as u32)?
    } else {
        Vec::new()
    };
    let anchors = match anchors {
        Some(a) => a.to_vec(),
        None => default_anchors(keys.len(), s.frames),
    };
    if anchors.len() != keys.len() {
        return Err(validation(format!(
            "{} anchors given for {} keyframes",
            anchors.len(),
            keys.len()
        )));
    }
    let report = evaluate(&video, &keys, &anchors, sc.feature, sc.direction)?;
    write_json_pretty(&run_dir.join(EVAL_JSON), &report)?;
    Ok(report)
}
