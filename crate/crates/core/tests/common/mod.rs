#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thoughtchain::gateway::BackendKind;
use thoughtchain::generator::checkpoint::save_base;
use thoughtchain::generator::net::{Arch, VelocityNet};
use thoughtchain::harness::config::PipelineConfig;

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Scripted backend over the shipped fixtures, writing under `root`.
pub fn scripted_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        run_root: root.join("runs"),
        base_checkpoint: root.join("base.ckpt"),
        ..Default::default()
    };
    cfg.backend.kind = BackendKind::Scripted;
    cfg.backend.fixture_root = fixture_root();
    cfg
}

/// An untrained toy-size base; enough for plumbing tests.
pub fn random_base(path: &Path) {
    let net = VelocityNet::init(Arch::toy(), 11).unwrap();
    save_base(&net, path, BTreeMap::new()).unwrap();
}
