//! Shipped scripted fixtures are exactly what the catalog bakes to.

mod common;

use std::path::Path;

use thoughtchain::harness::catalog::Catalog;
use thoughtchain::harness::fixtures::{bake_all, FIXTURE_SIZE};

fn files(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for d in std::fs::read_dir(root).unwrap() {
        let d = d.unwrap().path();
        for f in std::fs::read_dir(&d).unwrap() {
            let f = f.unwrap().path();
            out.push(f.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
    out.sort();
    out
}

#[test]
fn shipped_fixtures_match_regenerated() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = Catalog::builtin();
    let dirs = bake_all(&cat, tmp.path(), FIXTURE_SIZE).unwrap();
    assert_eq!(dirs.len(), cat.scenarios.len());
    let shipped = common::fixture_root();
    let names = files(tmp.path());
    assert_eq!(names, files(&shipped));
    for n in &names {
        let a = std::fs::read(tmp.path().join(n)).unwrap();
        let b = std::fs::read(shipped.join(n)).unwrap();
        assert!(
            a == b,
            "{n} differs from the baked fixture; run `thoughtchain fixtures --out crates/core/fixtures`"
        );
    }
}

#[test]
fn every_catalog_scenario_has_a_fixture() {
    for s in &Catalog::builtin().scenarios {
        assert!(
            common::fixture_root().join(&s.id).join("scenario.json").is_file(),
            "{}",
            s.id
        );
    }
}
