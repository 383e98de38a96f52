//! Stage runners over a run directory:
//!
//! ```text
//! <run_dir>/config.toml     resolved config snapshot
//! <run_dir>/scenario.json   prompt and tracked feature
//! <run_dir>/manifest.json
//! <run_dir>/thoughts/       keyframes, reasoning.json, metadata.csv
//! <run_dir>/tune/           adapter.ckpt, merged.ckpt, report.json
//! <run_dir>/video/          frame_%04d.png, preview.gif
//! <run_dir>/eval.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::eval::{load_keyframes, RunScenario, SCENARIO_JSON};
use super::timing::timing_scope;
use crate::chain_model::{read_tuning_csv, sha256_file, write_json_pretty, RunManifest, TextualThought};
use crate::error::{Error, Result};
use crate::gateway::build_gateway;
use crate::generator::checkpoint::{load_base, save_base};
use crate::generator::data::moving_squares;
use crate::generator::net::{Arch, VelocityNet};
use crate::generator::sample::euler_sample;
use crate::generator::text::encode_text;
use crate::generator::train::{pretrain, PretrainReport};
use crate::reasoner::{run_reasoning, ReasoningOutcome, METADATA_CSV};
use crate::sampler::{concat_prompts, crossfade, export_video, load_sampling_params, RenderOutput};
use crate::tuner::{tune, TuneOutput, ADAPTER_CKPT};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    /// Reason, tune on the keyframes, sample the tuned model.
    #[default]
    Full,
    /// Reason, then sample the untuned model with the composite prompt.
    NoVisualThought,
    /// Reason, then crossfade between the keyframes.
    NoSparseTuning,
    /// Sample the untuned model with the raw prompt.
    T2v,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoVisualThought => "no_visual_thought",
            Mode::NoSparseTuning => "no_sparse_tuning",
            Mode::T2v => "t2v",
        }
    }

    pub fn reasons(self) -> bool {
        self != Mode::T2v
    }

    pub fn tunes(self) -> bool {
        self == Mode::Full
    }
}

pub fn run_dir_for(cfg: &PipelineConfig, scenario_id: &str, mode: Mode) -> PathBuf {
    match mode {
        Mode::Full => cfg.run_root.join(scenario_id),
        m => cfg.run_root.join(format!("{scenario_id}__{}", m.as_str())),
    }
}

/// One run: config, scenario, mode and where it lives.
pub struct Run<'a> {
    pub cfg: &'a PipelineConfig,
    pub scenario: RunScenario,
    pub mode: Mode,
    pub dir: PathBuf,
}

fn rel(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a PipelineConfig, scenario: RunScenario, mode: Mode, dir: Option<PathBuf>) -> Self {
        let dir = dir.unwrap_or_else(|| run_dir_for(cfg, &scenario.id, mode));
        Self {
            cfg,
            scenario,
            mode,
            dir,
        }
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_JSON)
    }

    pub fn thoughts_dir(&self) -> PathBuf {
        self.dir.join("thoughts")
    }

    pub fn tune_dir(&self) -> PathBuf {
        self.dir.join("tune")
    }

    pub fn video_dir(&self) -> PathBuf {
        self.dir.join("video")
    }

    /// Existing manifest for this run, or a fresh one.
    pub fn manifest(&self) -> Result<RunManifest> {
        let fresh = RunManifest {
            scenario_id: self.scenario.id.clone(),
            mode: self.mode.as_str().into(),
            config_hash: self.cfg.hash()?,
            seed: self.cfg.sample.seed,
            ..Default::default()
        };
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(fresh);
        }
        let mut m = RunManifest::load(&p)?;
        m.config_hash = fresh.config_hash;
        m.seed = fresh.seed;
        Ok(m)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_json_pretty(&self.dir.join(SCENARIO_JSON), &self.scenario)?;
        let snap = self.dir.join(CONFIG_SNAPSHOT);
        std::fs::write(&snap, self.cfg.to_toml()?).map_err(|e| Error::io(&snap, e))
    }

    fn record(&self, m: &mut RunManifest, role: &str, path: &Path, hash: bool) -> Result<()> {
        m.artifact_paths.insert(role.into(), rel(&self.dir, path));
        if hash {
            m.artifact_hashes.insert(role.into(), sha256_file(path)?);
        }
        Ok(())
    }

    fn finish(&self, m: &mut RunManifest, stage: &str, r: &Result<impl Sized>) -> Result<()> {
        m.stage_status
            .insert(stage.into(), if r.is_ok() { "ok" } else { "failed" }.into());
        m.save(&self.manifest_path())
    }

    fn skip(&self, m: &mut RunManifest, stage: &str) -> Result<()> {
        m.stage_timings.insert(stage.into(), Default::default());
        m.stage_status.insert(stage.into(), "skipped".into());
        m.save(&self.manifest_path())
    }

    pub fn reason(&self) -> Result<ReasoningOutcome> {
        let prompt = crate::chain_model::PromptSpec::new(self.scenario.prompt.clone(), self.scenario.id.clone())
            .map_err(|e| Error::Config(e.to_string()))?;
        let gateway = build_gateway(&self.cfg.backend, &self.scenario.id)?;
        self.prepare()?;
        let mut m = self.manifest()?;
        let thoughts = self.thoughts_dir();
        let r = timing_scope(&mut m.stage_timings, "reasoning", || {
            let out = run_reasoning(&prompt, gateway.as_ref(), &self.cfg.reasoner, &thoughts)?;
            let sub = out.timing.substeps.clone();
            Ok((out, sub))
        });
        if let Ok(out) = &r {
            m.truncated = out.truncated;
            self.record(&mut m, "reasoning_json", &out.reasoning_json, true)?;
            self.record(&mut m, "metadata_csv", &out.metadata_csv, true)?;
            for v in &out.chain.visual {
                self.record(
                    &mut m,
                    &format!("keyframe_{}", v.index),
                    &thoughts.join(&v.file_path),
                    true,
                )?;
            }
        }
        self.finish(&mut m, "reasoning", &r)?;
        r.map_err(|e| e.in_stage("reasoning"))
    }

    fn require_base(&self) -> Result<()> {
        if self.cfg.base_checkpoint.is_file() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "base checkpoint {} does not exist; run `pretrain` first",
                self.cfg.base_checkpoint.display()
            )))
        }
    }

    fn require_thoughts(&self) -> Result<PathBuf> {
        let p = self.thoughts_dir().join(METADATA_CSV);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Config(format!(
                "{} does not exist; run `reason` first",
                p.display()
            )))
        }
    }

    pub fn tune(&self) -> Result<TuneOutput> {
        self.require_base()?;
        let csv = self.require_thoughts()?;
        self.prepare()?;
        let mut m = self.manifest()?;
        let r = timing_scope(&mut m.stage_timings, "tuning", || {
            let t = Instant::now();
            let base = load_base(&self.cfg.base_checkpoint)?;
            let load = t.elapsed().as_secs_f64();
            let pairs = read_tuning_csv(&csv)?;
            let out = tune(
                &base,
                load,
                &pairs,
                &self.thoughts_dir(),
                &self.cfg.tune,
                &self.tune_dir(),
            )?;
            let sub = out.report.timing.substeps.clone();
            Ok((out, sub))
        });
        if let Ok(out) = &r {
            self.record(&mut m, "adapter_ckpt", &out.adapter_ckpt, true)?;
            self.record(&mut m, "merged_ckpt", &out.merged_ckpt, true)?;
            self.record(&mut m, "tune_report", &out.report_json, false)?;
        }
        self.finish(&mut m, "tuning", &r)?;
        r.map_err(|e| e.in_stage("tuning"))
    }

    fn captions(&self) -> Result<Vec<TextualThought>> {
        Ok(read_tuning_csv(&self.require_thoughts()?)?
            .into_iter()
            .enumerate()
            .map(|(index, p)| TextualThought { index, text: p.text })
            .collect())
    }

    pub fn sample(&self) -> Result<RenderOutput> {
        self.require_base()?;
        let adapters = self.tune_dir().join(ADAPTER_CKPT);
        if self.mode.reasons() {
            self.require_thoughts()?;
        }
        if self.mode.tunes() && !adapters.is_file() {
            return Err(Error::Config(format!(
                "{} does not exist; run `tune` first",
                adapters.display()
            )));
        }
        self.prepare()?;
        let mut m = self.manifest()?;
        let sc = &self.cfg.sample;
        let r = timing_scope(&mut m.stage_timings, "sampling", || {
            let mut sub = BTreeMap::new();
            let t = Instant::now();
            let params = load_sampling_params(
                &self.cfg.base_checkpoint,
                self.mode.tunes().then_some(adapters.as_path()),
            )?;
            let arch = params.net().arch.clone();
            sub.insert("model_loading".to_string(), t.elapsed().as_secs_f64());
            let shape = arch.video_shape(sc.frames);
            let t = Instant::now();
            let video = match self.mode {
                Mode::NoSparseTuning => {
                    let keys = load_keyframes(&self.thoughts_dir(), arch.height as u32, arch.width as u32)?;
                    crossfade(&keys, sc.frames)?
                }
                mode => {
                    let prompt = if mode == Mode::T2v {
                        self.scenario.prompt.clone()
                    } else {
                        concat_prompts(&self.captions()?)?
                    };
                    let c = encode_text(&prompt, arch.text_dim)?;
                    euler_sample(params.field(), &c, shape, sc.steps, sc.seed)?
                }
            };
            sub.insert("sampling".to_string(), t.elapsed().as_secs_f64());
            let t = Instant::now();
            let out = export_video(&video, &self.video_dir())?;
            sub.insert("decoding_and_saving".to_string(), t.elapsed().as_secs_f64());
            Ok((out, sub))
        });
        if let Ok(out) = &r {
            m.artifact_paths.retain(|k, _| !k.starts_with("frame_"));
            m.artifact_hashes.retain(|k, _| !k.starts_with("frame_"));
            for (f, p) in out.frames.iter().enumerate() {
                self.record(&mut m, &format!("frame_{f:04}"), p, true)?;
            }
            self.record(&mut m, "preview_gif", &out.preview, true)?;
        }
        self.finish(&mut m, "sampling", &r)?;
        r.map_err(|e| e.in_stage("sampling"))
    }

    /// All three stages for this run's mode. Skipped stages get a zero timing.
    pub fn run_all(&self) -> Result<RunManifest> {
        self.require_base()?;
        if self.mode.reasons() {
            self.reason()?;
        } else {
            self.prepare()?;
            let mut m = self.manifest()?;
            self.skip(&mut m, "reasoning")?;
        }
        if self.mode.tunes() {
            self.tune()?;
        } else {
            let mut m = self.manifest()?;
            self.skip(&mut m, "tuning")?;
        }
        self.sample()?;
        RunManifest::load(&self.manifest_path())
    }
}

/// Pre-trains the toy generator on the moving-square corpus and writes
/// `cfg.base_checkpoint`.
pub fn pretrain_base(cfg: &PipelineConfig, mut on_step: impl FnMut(usize, f64)) -> Result<PretrainReport> {
    let arch = Arch::toy();
    let items = moving_squares(&arch, cfg.sample.frames)?;
    let mut net = VelocityNet::init(arch, cfg.pretrain.seed)?;
    let report = pretrain(&mut net, &items, &cfg.pretrain, &mut on_step)?;
    if let Some(dir) = cfg.base_checkpoint.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut meta = BTreeMap::new();
    meta.insert("corpus".to_string(), "moving_squares".to_string());
    meta.insert("steps".to_string(), cfg.pretrain.steps.to_string());
    meta.insert("seed".to_string(), cfg.pretrain.seed.to_string());
    save_base(&net, &cfg.base_checkpoint, meta)?;
    Ok(report)
}
