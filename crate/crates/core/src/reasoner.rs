//! The iterative keyframe loop: reason about the prompt, draw the first frame,
//! then alternate perception and editing until the model flags the last frame
//! or the frame budget runs out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::chain_model::{
    keyframe_file_name, pairs_from_chain, save_png, write_json_pretty, write_reasoning_json, write_tuning_csv,
    PromptSpec, ReasoningRecord, StageTiming, ThoughtChain,
};
use crate::error::{Error, Result};
use crate::gateway::{compose_chain_image, CallCounts, Counting, Gateway, Size};

pub const REASONING_JSON: &str = "reasoning.json";
pub const METADATA_CSV: &str = "metadata.csv";
pub const PARTIAL_JSON: &str = "partial.json";

pub const SUBSTEP_REASONING: &str = "initial_reasoning";
pub const SUBSTEP_GENERATION: &str = "image_generation";
pub const SUBSTEP_PERCEPTION: &str = "image_perception";
pub const SUBSTEP_EDITING: &str = "image_editing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    pub max_frames: usize,
    /// `(height, width)`.
    pub image_size: Size,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            max_frames: 8,
            image_size: (256, 256),
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.max_frames) {
            return Err(Error::Config(format!(
                "max_frames {} is outside [2, 16]",
                self.max_frames
            )));
        }
        crate::gateway::check_size(self.image_size).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ReasoningOutcome {
    pub chain: ThoughtChain,
    pub record: ReasoningRecord,
    pub counts: CallCounts,
    pub truncated: bool,
    pub timing: StageTiming,
    pub reasoning_json: PathBuf,
    pub metadata_csv: PathBuf,
}

/// Written next to the images when the loop fails part-way.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialChain {
    pub input_prompt: String,
    pub captions: Vec<String>,
    pub images: Vec<String>,
    pub error: String,
}

struct Progress {
    chain: ThoughtChain,
    substeps: BTreeMap<String, f64>,
}

impl Progress {
    fn timed<T>(&mut self, key: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        *self.substeps.entry(key.to_string()).or_insert(0.0) += t.elapsed().as_secs_f64();
        out
    }
}

/// Runs the loop and writes keyframes, the reasoning JSON and the tuning CSV
/// into `out_dir`. Each image is on disk before the next gateway call. On a
/// failure the images so far stay in place and [`PARTIAL_JSON`] describes them.
pub fn run_reasoning(
    prompt: &PromptSpec,
    gateway: &dyn Gateway,
    config: &ReasonerConfig,
    out_dir: &Path,
) -> Result<ReasoningOutcome> {
    prompt.validate()?;
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let counting = Counting::new(gateway);
    let start = Instant::now();
    let mut progress = Progress {
        chain: ThoughtChain::default(),
        substeps: BTreeMap::new(),
    };
    let result = reason_loop(prompt, &counting, config, out_dir, &mut progress);
    let (record, truncated) = match result {
        Ok(v) => v,
        Err(e) => {
            let partial = PartialChain {
                input_prompt: prompt.text.clone(),
                captions: progress.chain.textual.iter().map(|t| t.text.clone()).collect(),
                images: progress.chain.visual.iter().map(|v| v.file_path.clone()).collect(),
                error: e.to_string(),
            };
            let _ = write_json_pretty(&out_dir.join(PARTIAL_JSON), &partial);
            return Err(e);
        }
    };
    let chain = progress.chain;
    record.validate_against(&chain)?;
    let reasoning_json = write_reasoning_json(&prompt.scenario_id, &record, &out_dir.join(REASONING_JSON))?;
    let metadata_csv = write_tuning_csv(&pairs_from_chain(&chain, &record)?, &out_dir.join(METADATA_CSV))?;
    let _ = std::fs::remove_file(out_dir.join(PARTIAL_JSON));
    Ok(ReasoningOutcome {
        chain,
        record,
        counts: counting.counts(),
        truncated,
        timing: StageTiming {
            seconds: start.elapsed().as_secs_f64(),
            substeps: progress.substeps,
        },
        reasoning_json,
        metadata_csv,
    })
}

fn persist(progress: &mut Progress, out_dir: &Path, id: &str, image: image::RgbImage, text: String) -> Result<()> {
    let name = keyframe_file_name(id, progress.chain.len());
    save_png(&image, &out_dir.join(&name))?;
    progress.chain.push(image, name, text)
}

fn reason_loop(
    prompt: &PromptSpec,
    gw: &dyn Gateway,
    config: &ReasonerConfig,
    out_dir: &Path,
    progress: &mut Progress,
) -> Result<(ReasoningRecord, bool)> {
    let size = config.image_size;
    let first = progress.timed(SUBSTEP_REASONING, || gw.chat_first_frame(prompt))?;
    let img = progress.timed(SUBSTEP_GENERATION, || gw.generate_image(&first.context_frame, size))?;
    persist(
        progress,
        out_dir,
        &prompt.scenario_id,
        img,
        first.concise_prompt.clone(),
    )?;
    let mut key_frames = Vec::new();
    let mut done = false;
    while progress.chain.len() < config.max_frames {
        let composite = compose_chain_image(&progress.chain.images())?;
        let txt = progress.chain.textual.clone();
        let next = progress.timed(SUBSTEP_PERCEPTION, || {
            gw.perceive_next(&composite, &first.consequences, prompt, &txt)
        })?;
        let img = progress.timed(SUBSTEP_EDITING, || {
            gw.edit_image(&composite, &next.edit_instruction, size)
        })?;
        persist(
            progress,
            out_dir,
            &prompt.scenario_id,
            img,
            next.edit_instruction.clone(),
        )?;
        key_frames.push(next.edit_instruction);
        if next.is_last {
            done = true;
            break;
        }
    }
    let record = ReasoningRecord {
        input_prompt: prompt.text.clone(),
        thoughts: first.thoughts,
        consequences: first.consequences,
        context_frame: first.context_frame,
        concise_prompt: first.concise_prompt,
        key_frames,
    };
    Ok((record, !done))
}
