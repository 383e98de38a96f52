//! Bakes scripted-backend fixture directories from catalog scene tracks.

use std::path::{Path, PathBuf};

use super::catalog::{Catalog, Scenario};
use crate::chain_model::{save_png, to_json_pretty};
use crate::error::{Error, Result};
use crate::gateway::scripted::{image_file, response_file, ScenarioMeta};
use crate::gateway::{FirstFrameResponse, NextFrameResponse, Size};

pub const FIXTURE_SIZE: Size = (256, 256);

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes one scenario's fixtures into `root/<id>/`.
pub fn bake_scenario(s: &Scenario, root: &Path, size: Size) -> Result<PathBuf> {
    let dir = root.join(&s.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = ScenarioMeta {
        prompt: Some(s.prompt.clone()),
        repeat_last: !s.terminal,
    };
    write(&dir.join("scenario.json"), &to_json_pretty(&meta)?)?;
    let first = FirstFrameResponse {
        thoughts: s.thoughts.clone(),
        context_frame: s.context_frame.clone(),
        concise_prompt: s.stages[0].caption.clone(),
        consequences: s.consequences.clone(),
    };
    write(&dir.join(response_file(0)), &to_json_pretty(&first)?)?;
    let n = s.stages.len();
    for (i, st) in s.stages.iter().enumerate() {
        save_png(
            &s.track.at(st.progress).render(size.1, size.0),
            &dir.join(image_file(i)),
        )?;
        if i > 0 {
            let next = NextFrameResponse {
                edit_instruction: st.caption.clone(),
                is_last: s.terminal && i + 1 == n,
            };
            write(&dir.join(response_file(i)), &to_json_pretty(&next)?)?;
        }
    }
    Ok(dir)
}

pub fn bake_all(catalog: &Catalog, root: &Path, size: Size) -> Result<Vec<PathBuf>> {
    catalog.scenarios.iter().map(|s| bake_scenario(s, root, size)).collect()
}
