//! Per-geo-unit JSON artifacts on disk.
//!
//! Each unit has a directory holding one file per artifact kind plus a
//! `meta.json` with write times and version counters. Artifact bytes depend
//! only on their content, so reruns on unchanged inputs are byte-identical.
//! Every write goes to a temporary file in the same directory and is renamed
//! into place, so readers see either the old or the new file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const DATA_ROOT_ENV: &str = "EPICAST_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Preprocessed,
    Fit,
    Forecast,
    Risk,
    Analytics,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Preprocessed,
        ArtifactKind::Fit,
        ArtifactKind::Forecast,
        ArtifactKind::Risk,
        ArtifactKind::Analytics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Preprocessed => "preprocessed",
            ArtifactKind::Fit => "fit",
            ArtifactKind::Forecast => "forecast",
            ArtifactKind::Risk => "risk",
            ArtifactKind::Analytics => "analytics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub written_at: DateTime<Utc>,
    pub version: u64,
}

/// Write times of a unit's artifacts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitMeta {
    pub artifacts: BTreeMap<ArtifactKind, ArtifactMeta>,
}

/// Canonical JSON encoding used for every artifact and API payload.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `EPICAST_DATA_ROOT` if set, else `default`.
    pub fn from_env(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) if !root.is_empty() => Self::new(root),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn unit_dir(&self, geo_id: &str) -> PathBuf {
        self.root.join("units").join(geo_id)
    }

    pub fn path(&self, geo_id: &str, kind: ArtifactKind) -> PathBuf {
        self.unit_dir(geo_id).join(format!("{}.json", kind.name()))
    }

    fn meta_path(&self, geo_id: &str) -> PathBuf {
        self.unit_dir(geo_id).join("meta.json")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn meta(&self, geo_id: &str) -> UnitMeta {
        read_json(&self.meta_path(geo_id)).unwrap_or_default()
    }

    /// Store an artifact and stamp its write time.
    pub fn put<T: Serialize>(&self, geo_id: &str, kind: ArtifactKind, value: &T, now: DateTime<Utc>) -> Result<()> {
        check_id(geo_id)?;
        write_json(&self.path(geo_id, kind), value)?;
        let mut meta = self.meta(geo_id);
        let version = meta.artifacts.get(&kind).map_or(1, |m| m.version + 1);
        meta.artifacts.insert(kind, ArtifactMeta { written_at: now, version });
        write_json(&self.meta_path(geo_id), &meta)
    }

    pub fn get<T: DeserializeOwned>(&self, geo_id: &str, kind: ArtifactKind) -> Result<T> {
        check_id(geo_id)?;
        read_json(&self.path(geo_id, kind))
    }

    /// Raw bytes of an artifact, `None` if it does not exist.
    pub fn get_bytes(&self, geo_id: &str, kind: ArtifactKind) -> Result<Option<Vec<u8>>> {
        if check_id(geo_id).is_err() {
            return Ok(None);
        }
        match fs::read(self.path(geo_id, kind)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Units with at least one stored artifact, sorted.
    pub fn units(&self) -> Result<Vec<String>> {
        let dir = self.root.join("units");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Geo ids become directory names, so keep them to a safe alphabet.
fn check_id(geo_id: &str) -> Result<()> {
    let ok = !geo_id.is_empty()
        && geo_id != "."
        && geo_id != ".."
        && geo_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    anyhow::ensure!(ok, "geo id `{geo_id}` is not usable as an artifact key");
    Ok(())
}
