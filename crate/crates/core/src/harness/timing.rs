//! Wall-clock instrumentation keyed by the three pipeline stages.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::chain_model::StageTiming;
use crate::error::{validation, Result};

pub const STAGES: [&str; 3] = ["reasoning", "tuning", "sampling"];

pub fn check_stage(stage: &str) -> Result<()> {
    if STAGES.contains(&stage) {
        Ok(())
    } else {
        Err(validation(format!(
            "unknown stage {stage:?}; expected one of {STAGES:?}"
        )))
    }
}

/// Runs `f`, then records its wall-clock time under `stage`. Sub-steps the
/// closure reports are kept as nested entries.
pub fn timing_scope<T>(
    timings: &mut BTreeMap<String, StageTiming>,
    stage: &str,
    f: impl FnOnce() -> Result<(T, BTreeMap<String, f64>)>,
) -> Result<T> {
    check_stage(stage)?;
    let start = Instant::now();
    let out = f();
    let seconds = start.elapsed().as_secs_f64();
    let (value, substeps) = match out {
        Ok(v) => (Ok(v.0), v.1),
        Err(e) => (Err(e), BTreeMap::new()),
    };
    timings.insert(stage.to_string(), StageTiming { seconds, substeps });
    value
}
