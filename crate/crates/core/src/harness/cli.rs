//! Command-line front end. Flags override the config file.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::catalog::{Catalog, Direction, Feature};
use super::config::PipelineConfig;
use super::eval::{eval_run, RunScenario};
use super::fixtures::{bake_all, FIXTURE_SIZE};
use super::pipeline::{pretrain_base, run_dir_for, Mode, Run};
use crate::chain_model::validate_slug;
use crate::error::{Error, Result};
use crate::gateway::BackendKind;

#[derive(Debug, Parser)]
#[command(
    name = "thoughtchain",
    version,
    about = "Keyframe reasoning, sparse tuning and video sampling"
)]
pub struct Cli {
    /// TOML config file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both tune.seed and sample.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub run_root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub base_checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub fixture_root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_frames: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Target {
    /// Catalog scenario id, or the id for a custom --prompt.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Every scenario in the evaluation set.
    #[arg(long, conflicts_with = "scenario")]
    pub all: bool,
    /// Custom prompt instead of the catalog entry.
    #[arg(long, requires = "scenario")]
    pub prompt: Option<String>,
    #[arg(long, value_enum, default_value = "centroid_height")]
    pub feature: Feature,
    #[arg(long, value_enum, default_value = "decreasing")]
    pub direction: Direction,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: Mode,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the keyframe chain.
    Reason(Target),
    /// Fit adapters on the keyframes.
    Tune(Target),
    /// Render the video.
    Sample(Target),
    /// All stages for the chosen mode.
    RunAll(Target),
    /// Score a finished run and write eval.json.
    Eval {
        #[command(flatten)]
        target: Target,
        /// Comma-separated anchor frames.
        #[arg(long, value_delimiter = ',')]
        anchors: Option<Vec<usize>>,
    },
    /// List the catalog scenarios.
    Catalog {
        /// Include the extra fixture-only scenarios.
        #[arg(long)]
        extras: bool,
    },
    /// Train the base generator and write `base_checkpoint`.
    Pretrain {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Regenerate scripted fixtures from the catalog.
    Fixtures {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    pub fn load_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.tune.seed = s;
            cfg.sample.seed = s;
        }
        if let Some(p) = &self.run_root {
            cfg.run_root = p.clone();
        }
        if let Some(p) = &self.base_checkpoint {
            cfg.base_checkpoint = p.clone();
        }
        if let Some(k) = self.backend {
            cfg.backend.kind = k;
        }
        if let Some(p) = &self.fixture_root {
            cfg.backend.fixture_root = p.clone();
        }
        if let Some(n) = self.max_frames {
            cfg.reasoner.max_frames = n;
        }
        if let Command::Pretrain { steps: Some(s) } = self.command {
            cfg.pretrain.steps = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn catalog(cfg: &PipelineConfig) -> Result<Catalog> {
    match &cfg.catalog {
        Some(p) => Catalog::load(p),
        None => Ok(Catalog::builtin()),
    }
}

fn scenarios(cfg: &PipelineConfig, t: &Target) -> Result<Vec<RunScenario>> {
    let cat = catalog(cfg)?;
    let from = |s: &super::catalog::Scenario| RunScenario {
        id: s.id.clone(),
        prompt: s.prompt.clone(),
        feature: s.feature,
        direction: s.direction,
    };
    if t.all {
        return Ok(cat.evaluation_set().into_iter().map(from).collect());
    }
    let id = t
        .scenario
        .as_deref()
        .ok_or_else(|| Error::Config("pass --scenario <id> or --all".into()))?;
    validate_slug(id).map_err(|e| Error::Config(e.to_string()))?;
    Ok(vec![match &t.prompt {
        Some(p) => RunScenario {
            id: id.into(),
            prompt: p.clone(),
            feature: t.feature,
            direction: t.direction,
        },
        None => from(cat.get(id)?),
    }])
}

/// Runs one command and returns its process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.load_config()?;
    match &cli.command {
        Command::Catalog { extras } => {
            let cat = catalog(&cfg)?;
            let mut out = std::io::stdout().lock();
            for s in cat.scenarios.iter().filter(|s| *extras || s.in_catalog) {
                if writeln!(out, "{}\t{}", s.id, s.prompt).is_err() {
                    break;
                }
            }
        }
        Command::Pretrain { .. } => {
            let every = (cfg.pretrain.steps / 10).max(1);
            let r = pretrain_base(&cfg, |s, l| {
                if s % every == 0 {
                    tracing::info!(step = s, loss = l, "pretrain");
                }
            })?;
            println!(
                "loss {:.4} -> {:.4} in {:.1}s, wrote {}",
                r.initial_eval_loss,
                r.final_eval_loss,
                r.seconds,
                cfg.base_checkpoint.display()
            );
        }
        Command::Fixtures { out } => {
            let root = out.clone().unwrap_or_else(|| cfg.backend.fixture_root.clone());
            let dirs = bake_all(&catalog(&cfg)?, &root, FIXTURE_SIZE)?;
            println!("wrote {} fixtures under {}", dirs.len(), root.display());
        }
        Command::Reason(t) | Command::Tune(t) | Command::Sample(t) | Command::RunAll(t) => {
            for sc in scenarios(&cfg, t)? {
                let run = Run::new(&cfg, sc, t.mode, None);
                match &cli.command {
                    Command::Reason(_) => {
                        let out = run.reason()?;
                        println!(
                            "{}: {} keyframes{}",
                            run.scenario.id,
                            out.chain.len(),
                            if out.truncated { " (truncated)" } else { "" }
                        );
                    }
                    Command::Tune(_) => {
                        let out = run.tune()?;
                        println!(
                            "{}: loss {:.4} -> {:.4}",
                            run.scenario.id, out.report.initial_mean_loss, out.report.final_mean_loss
                        );
                    }
                    Command::Sample(_) => {
                        let out = run.sample()?;
                        println!(
                            "{}: {} frames in {}",
                            run.scenario.id,
                            out.frames.len(),
                            run.video_dir().display()
                        );
                    }
                    _ => {
                        run.run_all()?;
                        println!("{}: {}", run.scenario.id, run.dir.display());
                    }
                }
            }
        }
        Command::Eval { target, anchors } => {
            for sc in scenarios(&cfg, target)? {
                let dir = run_dir_for(&cfg, &sc.id, target.mode);
                let anchors = anchors.as_deref().or(cfg.eval.anchors.as_deref());
                let r = eval_run(&dir, anchors)?;
                println!(
                    "{}: affinity {:.4} monotonicity {:.2} smoothness {:.4}",
                    sc.id, r.mean_affinity, r.monotonicity_score, r.smoothness
                );
            }
        }
    }
    Ok(())
}
