#![allow(dead_code)]

use std::path::{Path, PathBuf};

use epicast::manifest::Manifest;
use epicast::synth::{self, SynthOptions};
use serde_json::Value;
use tempfile::TempDir;

/// Synthetic inputs in a temp dir with a manifest trimmed for test speed.
pub fn synth_inputs(counties: usize, per_cluster: usize, cluster: bool) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = synth::generate(&SynthOptions {
        counties,
        counties_per_cluster: per_cluster,
        days: 90,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    synth::write(dir.path(), &data, cluster).unwrap();
    let path = dir.path().join("manifest.json");
    let mut m: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    m["fit"]["initializer_count"] = 2.into();
    std::fs::write(&path, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    dir
}

pub fn manifest(dir: &Path) -> Manifest {
    Manifest::load(&dir.join("manifest.json")).unwrap()
}

pub fn read_value(path: impl AsRef<Path>) -> Value {
    let path = path.as_ref();
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_epicast"))
}
