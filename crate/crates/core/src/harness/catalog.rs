//! Scenario catalog: prompts, the scene tracks their fixtures are drawn from,
//! and the feature each scenario's video is expected to move monotonically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain_model::{validate_slug, PromptSpec};
use crate::error::{ensure, Error, Result};
use crate::scene::SceneTrack;

const BUILTIN: &str = include_str!("../../data/catalog.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Feature {
    /// `1 − row` of the bright-region centroid, so higher up is larger.
    CentroidHeight,
    /// Column of the bright-region centroid.
    CentroidX,
    BrightArea,
    DarkArea,
    MeanLuminance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub progress: f64,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub prompt: String,
    /// Part of the 20-prompt evaluation list.
    pub in_catalog: bool,
    pub feature: Feature,
    pub direction: Direction,
    pub thoughts: String,
    pub consequences: String,
    pub context_frame: String,
    pub track: SceneTrack,
    /// Stage 0 is the first frame; its caption is the concise prompt.
    pub stages: Vec<Stage>,
    /// False for fixtures that never flag a last frame.
    pub terminal: bool,
}

impl Scenario {
    pub fn prompt_spec(&self) -> Result<PromptSpec> {
        PromptSpec::new(self.prompt.clone(), self.id.clone())
    }

    pub fn validate(&self) -> Result<()> {
        validate_slug(&self.id)?;
        ensure(!self.prompt.trim().is_empty(), || format!("{}: empty prompt", self.id))?;
        ensure(self.stages.len() >= 2, || {
            format!("{}: needs at least two stages", self.id)
        })?;
        for s in &self.stages {
            ensure(
                (0.0..=1.0).contains(&s.progress) && !s.caption.trim().is_empty(),
                || format!("{}: bad stage {s:?}", self.id),
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub scenarios: Vec<Scenario>,
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled catalog is valid")
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let c: Catalog = serde_json::from_str(raw)?;
        for s in &c.scenarios {
            s.validate()?;
        }
        let mut ids: Vec<&str> = c.scenarios.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ensure(ids.windows(2).all(|w| w[0] != w[1]), || "duplicate scenario id".into())?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn get(&self, id: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("unknown scenario {id:?}")))
    }

    /// The 20 evaluation prompts, in list order.
    pub fn evaluation_set(&self) -> Vec<&Scenario> {
        self.scenarios.iter().filter(|s| s.in_catalog).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_shape() {
        let c = Catalog::builtin();
        let eval = c.evaluation_set();
        assert_eq!(eval.len(), 20);
        assert_eq!(
            eval[0].prompt,
            "A rock and a feather falling from the sky towards the ground."
        );
        assert_eq!(
            eval[19].prompt,
            "A cup of water is falling towards the ground on its side."
        );
        let frames: usize = eval.iter().map(|s| s.stages.len()).sum();
        assert_eq!(frames as f64 / 20.0, 3.5);
        let s = c.get("sulfuric_acid").unwrap();
        assert_eq!(s.stages.len(), 5);
        assert!(!c.get("never_ending").unwrap().terminal);
        assert!(c.get("nope").is_err());
    }
}
