//! Sparse inference-time tuning: adapters trained on keyframe/caption pairs,
//! each keyframe treated as a one-frame video, under the same flow-matching
//! objective as pre-training.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{imageops::FilterType, DynamicImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain_model::{write_json_pretty, StageTiming, TuningPair};
use crate::error::{ensure, validation, Error, Result};
use crate::generator::checkpoint::{save_adapters, save_base};
use crate::generator::flow::fm_loss_batch;
use crate::generator::net::VelocityNet;
use crate::generator::optim::{OptimConfig, Optimizer, OptimizerKind};
use crate::generator::tensor::{VideoShape, VideoTensor};
use crate::generator::train::{adapter_step, eval_draws, Draws, TrainItem};
use crate::lora::{inject, AdaptedParams, LayerSelector};

pub const ADAPTER_CKPT: &str = "adapter.ckpt";
pub const MERGED_CKPT: &str = "merged.ckpt";
pub const REPORT_JSON: &str = "report.json";

pub const SUBSTEP_PREPROCESS: &str = "preprocess";
pub const SUBSTEP_LOAD_MODEL: &str = "load_model";
pub const SUBSTEP_FINE_TUNING: &str = "fine_tuning";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub lr: f64,
    pub steps: usize,
    /// Draws per step; 0 means every pair (times `repeats`) each step.
    pub batch_size: usize,
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    pub selector: LayerSelector,
    /// Copies of each pair in the per-step pool.
    pub repeats: usize,
    pub optimizer: OptimizerKind,
    /// Fixed `(x0, t)` draws per pair for the before/after loss.
    pub eval_draws: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            steps: 200,
            batch_size: 0,
            rank: 16,
            alpha: 16.0,
            seed: 0,
            selector: LayerSelector::AllLinear,
            repeats: 1,
            optimizer: OptimizerKind::Adam,
            eval_draws: 8,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return bad("tune.steps must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("tune.lr {} must be positive", self.lr));
        }
        if self.rank == 0 || !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("tune.rank and tune.alpha must be positive".into());
        }
        if self.repeats == 0 || self.eval_draws == 0 {
            return bad("tune.repeats and tune.eval_draws must be positive".into());
        }
        Ok(())
    }

    /// Checks that the batch fits the pool built from `pairs` pairs.
    pub fn validate_for(&self, pairs: usize) -> Result<()> {
        self.validate()?;
        ensure(pairs > 0, || "no tuning pairs".into())?;
        if self.batch_size > pairs * self.repeats {
            return Err(Error::Config(format!(
                "tune.batch_size {} exceeds {pairs} pairs × {} repeats",
                self.batch_size, self.repeats
            )));
        }
        Ok(())
    }

    fn optim(&self) -> OptimConfig {
        match self.optimizer {
            OptimizerKind::Adam => OptimConfig::adam(self.lr),
            OptimizerKind::Sgd => OptimConfig::sgd(self.lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub pairs: usize,
    pub trainable_params: usize,
    pub step_losses: Vec<f64>,
    pub initial_pair_losses: Vec<f64>,
    pub final_pair_losses: Vec<f64>,
    pub initial_mean_loss: f64,
    pub final_mean_loss: f64,
    pub base_hash: String,
    pub timing: StageTiming,
    /// Set when tuning stopped early on a non-finite loss.
    pub aborted: Option<String>,
}

/// `[0, 255]` RGB → `[-1, 1]` tensor of shape (1, H, W, 3).
pub fn image_as_one_frame_video(img: &DynamicImage) -> Result<VideoTensor> {
    let channels = img.color().channel_count();
    ensure(matches!(img, DynamicImage::ImageRgb8(_)), || {
        format!(
            "keyframe has {channels} channels ({:?}); expected 8-bit RGB",
            img.color()
        )
    })?;
    VideoTensor::from_frames(&[img.to_rgb8()])
}

/// Loads each pair's image from `dir`, resizes it to `shape` and builds the
/// tuning items in pair order.
pub fn pair_items(pairs: &[TuningPair], dir: &Path, shape: VideoShape, text_dim: usize) -> Result<Vec<TrainItem>> {
    ensure(!pairs.is_empty(), || "no tuning pairs".into())?;
    pairs
        .iter()
        .map(|p| {
            let path = dir.join(&p.file_name);
            if !path.is_file() {
                return Err(validation(format!(
                    "tuning pair references missing image {}",
                    path.display()
                )));
            }
            let img = image::open(&path)?;
            let img = if matches!(img, DynamicImage::ImageRgb8(_)) {
                img
            } else {
                return Err(validation(format!(
                    "{} is not 8-bit RGB ({:?})",
                    path.display(),
                    img.color()
                )));
            };
            let small = img.resize_exact(shape.width as u32, shape.height as u32, FilterType::Triangle);
            TrainItem::new(&p.text, image_as_one_frame_video(&small)?, text_dim)
        })
        .collect()
}

fn pair_losses(params: &AdaptedParams, items: &[TrainItem], draws: &Draws) -> Result<Vec<f64>> {
    let batch = draws.batch(items);
    (0..items.len())
        .map(|i| {
            let own: Vec<_> = batch
                .iter()
                .zip(&draws.items)
                .filter(|(_, &k)| k == i)
                .map(|(s, _)| *s)
                .collect();
            fm_loss_batch(params, &own)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Tunes fresh adapters on `items`. The base is never modified. On a
/// non-finite loss the adapters are rolled back to the last finite step and
/// the report carries the reason.
pub fn tune_items(base: &VelocityNet, items: &[TrainItem], cfg: &TuneConfig) -> Result<(AdaptedParams, TuneReport)> {
    cfg.validate_for(items.len())?;
    let start = Instant::now();
    let base_hash = base.param_hash();
    let mut params = inject(base, &cfg.selector, cfg.rank, cfg.alpha, cfg.seed)?;
    let eval = eval_draws(items, cfg.eval_draws, cfg.seed ^ 0x7e57_d4a5);
    let initial_pair_losses = pair_losses(&params, items, &eval)?;
    let mut opt = Optimizer::new(cfg.optim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<usize> = (0..items.len())
        .flat_map(|i| std::iter::repeat_n(i, cfg.repeats))
        .collect();
    let full = cfg.batch_size == 0 || cfg.batch_size == pool.len();
    let mut order: Vec<usize> = Vec::new();
    let mut step_losses = Vec::with_capacity(cfg.steps);
    // Adapters at which the loss was last evaluated finite.
    let mut last_good = params.flat_adapter_params();
    let mut aborted = None;
    for step in 0..cfg.steps {
        let idx = if full {
            pool.clone()
        } else {
            let mut idx = Vec::with_capacity(cfg.batch_size);
            while idx.len() < cfg.batch_size {
                if order.is_empty() {
                    order = pool.clone();
                    order.shuffle(&mut rng);
                }
                idx.push(order.pop().expect("refilled above"));
            }
            idx
        };
        let draws = Draws::sample(items, idx, &mut rng);
        let before = params.flat_adapter_params();
        match adapter_step(&mut params, &mut opt, &draws.batch(items)) {
            Ok(loss) if loss.is_finite() && params.flat_adapter_params().iter().all(|v| v.is_finite()) => {
                step_losses.push(loss);
                last_good = before;
            }
            Ok(loss) => {
                aborted = Some(format!("step {step}: non-finite state (loss {loss})"));
                break;
            }
            Err(Error::Numeric(m)) => {
                aborted = Some(format!("step {step}: {m}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if aborted.is_some() {
        params.set_flat_adapter_params(&last_good)?;
    }
    let final_pair_losses = pair_losses(&params, items, &eval)?;
    let report = TuneReport {
        pairs: items.len(),
        trainable_params: params.trainable_count(),
        step_losses,
        initial_mean_loss: mean(&initial_pair_losses),
        final_mean_loss: mean(&final_pair_losses),
        initial_pair_losses,
        final_pair_losses,
        base_hash,
        timing: StageTiming {
            seconds: start.elapsed().as_secs_f64(),
            substeps: BTreeMap::new(),
        },
        aborted,
    };
    Ok((params, report))
}

#[derive(Debug, Clone)]
pub struct TuneOutput {
    pub params: AdaptedParams,
    pub report: TuneReport,
    pub adapter_ckpt: PathBuf,
    pub merged_ckpt: PathBuf,
    pub report_json: PathBuf,
}

/// Tunes on pairs read from `image_dir`, then writes the adapter checkpoint,
/// a merged checkpoint and the report into `out_dir`. An aborted tune still
/// writes the last good adapters before returning the error.
pub fn tune(
    base: &VelocityNet,
    load_seconds: f64,
    pairs: &[TuningPair],
    image_dir: &Path,
    cfg: &TuneConfig,
    out_dir: &Path,
) -> Result<TuneOutput> {
    cfg.validate_for(pairs.len())?;
    let t = Instant::now();
    let items = pair_items(pairs, image_dir, base.arch.video_shape(1), base.arch.text_dim)?;
    let preprocess = t.elapsed().as_secs_f64();
    let (params, mut report) = tune_items(base, &items, cfg)?;
    let fine_tuning = report.timing.seconds;
    report.timing = StageTiming {
        seconds: preprocess + load_seconds + fine_tuning,
        substeps: BTreeMap::from([
            (SUBSTEP_PREPROCESS.to_string(), preprocess),
            (SUBSTEP_LOAD_MODEL.to_string(), load_seconds),
            (SUBSTEP_FINE_TUNING.to_string(), fine_tuning),
        ]),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let adapter_ckpt = out_dir.join(ADAPTER_CKPT);
    let merged_ckpt = out_dir.join(MERGED_CKPT);
    let report_json = out_dir.join(REPORT_JSON);
    save_adapters(&params, &adapter_ckpt)?;
    save_base(
        &params.merged()?,
        &merged_ckpt,
        BTreeMap::from([("source".into(), "merged adapters".into())]),
    )?;
    write_json_pretty(&report_json, &report)?;
    if let Some(reason) = &report.aborted {
        return Err(Error::Numeric(format!(
            "tuning diverged at {reason}; last good adapters kept"
        )));
    }
    Ok(TuneOutput {
        params,
        report,
        adapter_ckpt,
        merged_ckpt,
        report_json,
    })
}
