//! Pipeline configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epicast_core::analytics::RiskThresholds;
use epicast_core::calibrate::FitConfig;
use epicast_core::preprocess::PreprocessConfig;
use serde::{Deserialize, Serialize};

/// Which geo-units to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeoSelection {
    /// The literal string `"all"`.
    All(AllUnits),
    Ids(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AllUnits {
    #[serde(rename = "all")]
    All,
}

impl Default for GeoSelection {
    fn default() -> Self {
        GeoSelection::All(AllUnits::All)
    }
}

impl GeoSelection {
    pub fn includes(&self, id: &str) -> bool {
        match self {
            GeoSelection::All(_) => true,
            GeoSelection::Ids(ids) => ids.iter().any(|i| i == id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cadence {
    /// A stored fit younger than this is reused.
    pub fit_every_days: f64,
    /// Risk is recomputed on every run; kept for reference.
    pub risk_every_days: f64,
}

impl Default for Cadence {
    fn default() -> Self {
        Self {
            fit_every_days: 3.0,
            risk_every_days: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterOptions {
    pub resolution: f64,
    pub seed: u64,
    pub symmetrize: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            seed: 0,
            symmetrize: true,
        }
    }
}

fn default_horizon() -> usize {
    28
}

fn default_workers() -> usize {
    18
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub geo_ids: GeoSelection,
    pub cases: PathBuf,
    pub population: PathBuf,
    #[serde(default)]
    pub mobility: Option<PathBuf>,
    /// With a commute file, counties are clustered and the clusters become
    /// the geo-units.
    #[serde(default)]
    pub commute: Option<PathBuf>,
    #[serde(default)]
    pub states: Option<PathBuf>,
    #[serde(default)]
    pub cluster: ClusterOptions,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub thresholds: RiskThresholds,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub cadence: Cadence,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Artifact root; `EPICAST_DATA_ROOT` takes precedence.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
}

/// Risk needs three forecast weeks.
pub const MIN_HORIZON: usize = 21;

impl Manifest {
    /// Read a manifest, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        m.validate()?;
        Ok(m)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cases);
        fix(&mut self.population);
        for p in [&mut self.mobility, &mut self.commute, &mut self.states, &mut self.data_root]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.horizon < MIN_HORIZON {
            bail!("horizon must be at least {MIN_HORIZON} days, got {}", self.horizon);
        }
        if !(self.cadence.fit_every_days >= 0.0) {
            bail!("fit_every_days must be >= 0");
        }
        self.thresholds.validate()?;
        self.fit.validate()?;
        let files = [Some(&self.cases), Some(&self.population), self.mobility.as_ref(), self.commute.as_ref(), self.states.as_ref()];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                bail!("manifest references missing file {}", p.display());
            }
        }
        Ok(())
    }

    /// Manifest `data_root` or `./data`, overridden by the environment.
    pub fn store(&self) -> crate::store::ArtifactStore {
        crate::store::ArtifactStore::from_env(self.data_root.clone().unwrap_or_else(|| PathBuf::from("data")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn loads_with_defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cases.csv", "geo_id,date,cum_cases,cum_deaths\n");
        write(dir.path(), "population.csv", "geo_id,population\n");
        write(dir.path(), "m.json", r#"{"cases":"cases.csv","population":"population.csv"}"#);
        let m = Manifest::load(&dir.path().join("m.json")).unwrap();
        assert_eq!(m.workers, 18);
        assert_eq!(m.horizon, 28);
        assert_eq!(m.cadence.fit_every_days, 3.0);
        assert!(m.geo_ids.includes("anything"));
        assert_eq!(m.cases, dir.path().join("cases.csv"));
    }

    #[test]
    fn selection_forms() {
        let all: GeoSelection = serde_json::from_str(r#""all""#).unwrap();
        assert!(all.includes("x"));
        let ids: GeoSelection = serde_json::from_str(r#"["a","b"]"#).unwrap();
        assert!(ids.includes("a") && !ids.includes("c"));
        assert!(serde_json::from_str::<GeoSelection>(r#""some""#).is_err());
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cases.csv", "geo_id,date,cum_cases,cum_deaths\n");
        write(dir.path(), "population.csv", "geo_id,population\n");
        write(dir.path(), "a.json", r#"{"cases":"cases.csv","population":"population.csv","workers":0}"#);
        assert!(Manifest::load(&dir.path().join("a.json")).is_err());
        write(dir.path(), "b.json", r#"{"cases":"missing.csv","population":"population.csv"}"#);
        assert!(Manifest::load(&dir.path().join("b.json")).is_err());
        write(dir.path(), "c.json", r#"{"cases":"cases.csv","population":"population.csv","horizon":14}"#);
        assert!(Manifest::load(&dir.path().join("c.json")).is_err());
    }
}
