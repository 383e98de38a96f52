//! TOML pipeline configuration. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain_model::sha256_hex;
use crate::error::{Error, Result};
use crate::gateway::BackendConfig;
use crate::generator::train::PretrainConfig;
use crate::reasoner::ReasonerConfig;
use crate::tuner::TuneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Total frames, first frame included.
    pub frames: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            steps: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Video frame per keyframe; evenly spaced when absent.
    pub anchors: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_root: PathBuf,
    /// Pre-trained generator used by tuning and sampling.
    pub base_checkpoint: PathBuf,
    /// Scenario catalog; the bundled one when absent.
    pub catalog: Option<PathBuf>,
    pub backend: BackendConfig,
    pub reasoner: ReasonerConfig,
    pub tune: TuneConfig,
    pub sample: SampleConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            run_root: PathBuf::from("runs"),
            base_checkpoint: PathBuf::from("base.ckpt"),
            catalog: None,
            backend: BackendConfig::default(),
            reasoner: ReasonerConfig::default(),
            tune: TuneConfig::default(),
            sample: SampleConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn parse(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&raw)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&dir);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        resolve(dir, &mut self.run_root);
        resolve(dir, &mut self.base_checkpoint);
        resolve(dir, &mut self.backend.fixture_root);
        if let Some(c) = self.catalog.as_mut() {
            resolve(dir, c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.backend.validate().map_err(cfg)?;
        self.reasoner.validate().map_err(cfg)?;
        self.tune.validate().map_err(cfg)?;
        self.pretrain.validate().map_err(cfg)?;
        if self.sample.frames == 0 || self.sample.steps == 0 {
            return Err(Error::Config("sample.frames and sample.steps must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hash of every setting except where runs are written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.run_root = PathBuf::new();
        Ok(sha256_hex(&serde_json::to_vec(&c)?))
    }
}
