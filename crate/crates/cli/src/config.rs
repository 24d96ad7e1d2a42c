//! Run configuration read from a single JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiltsens_core::diagnostics::Subgroup;
use tiltsens_core::sim::SimulationConfig;
use tiltsens_core::{CiSpec, Dataset, Error, NuisanceConfig, Result, Schema, TiltFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    Path(PathBuf),
    Inline(Schema),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltConfig {
    #[serde(default = "identity")]
    pub s1: TiltFunction,
    #[serde(default = "identity")]
    pub s0: TiltFunction,
    #[serde(default = "zero")]
    pub gamma1: Vec<f64>,
    #[serde(default = "zero")]
    pub gamma0: Vec<f64>,
}

fn identity() -> TiltFunction {
    TiltFunction::Identity
}

fn zero() -> Vec<f64> {
    vec![0.0]
}

impl Default for TiltConfig {
    fn default() -> Self {
        TiltConfig { s1: identity(), s0: identity(), gamma1: zero(), gamma0: zero() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GofConfig {
    pub subgroups: Vec<Subgroup>,
    #[serde(default = "default_synth")]
    pub n_synth: usize,
    /// Also compare against the logistic and normal linear baseline.
    #[serde(default)]
    pub parametric: bool,
}

fn default_synth() -> usize {
    100_000
}

/// Where the simulation truth comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSource {
    /// A saved fit; covariates come from the run's data.
    Artifact { path: PathBuf },
    /// Fit on the run's data.
    Data,
    /// Fit on synthetic birth-weight-like data of size `n`.
    Synthetic { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub truth: TruthSource,
    /// The run seed replaces `settings.seed`.
    pub settings: SimulationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<SchemaSource>,
    /// Mandatory; nothing is seeded from the clock.
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub ci: CiSpec,
    #[serde(default)]
    pub tilt: TiltConfig,
    #[serde(default)]
    pub gof: Option<GofConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
}

fn default_k() -> usize {
    5
}

impl RunConfig {
    /// Parses `path`; relative paths inside are resolved against its
    /// directory and must exist.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.data.as_mut() {
            resolve(d);
        }
        if let Some(SchemaSource::Path(p)) = cfg.schema.as_mut() {
            resolve(p);
        }
        if let Some(SimulateConfig { truth: TruthSource::Artifact { path }, .. }) = cfg.simulate.as_mut() {
            resolve(path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(d) = &self.data {
            paths.push(d);
        }
        if let Some(SchemaSource::Path(p)) = &self.schema {
            paths.push(p);
        }
        if let Some(SimulateConfig { truth: TruthSource::Artifact { path }, .. }) = &self.simulate {
            paths.push(path);
        }
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!("path {} does not exist", p.display())));
        }
        if self.data.is_some() != self.schema.is_some() {
            return Err(Error::Config("data and schema must be given together".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("K must be at least 2, got {}", self.k)));
        }
        if self.tilt.gamma1.is_empty() || self.tilt.gamma0.is_empty() {
            return Err(Error::Config("gamma grids must be nonempty".into()));
        }
        self.tilt.s1.validate()?;
        self.tilt.s0.validate()?;
        self.ci.validate()?;
        self.nuisance.propensity.validate()?;
        self.nuisance.outcome.validate()?;
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        match &self.schema {
            Some(SchemaSource::Inline(s)) => Ok(s.clone()),
            Some(SchemaSource::Path(p)) => Schema::from_json(&std::fs::read_to_string(p)?),
            None => Err(Error::Config("no schema configured".into())),
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let path = self.data.as_ref().ok_or_else(|| Error::Config("no data path configured".into()))?;
        Dataset::load_csv(path, &self.schema()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn seed_is_mandatory() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.json", "{}");
        let e = RunConfig::load(&p).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("seed")), "{e}");
    }

    #[test]
    fn relative_paths_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.csv", "x,t,y\n1,0,2\n");
        let p = write(
            dir.path(),
            "c.json",
            r#"{"data": "d.csv", "schema": {"columns": {"x": {"role": "covariate"}, "t": {"role": "treatment"}, "y": {"role": "outcome"}}}, "seed": 4}"#,
        );
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.data.as_deref(), Some(dir.path().join("d.csv").as_path()));
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.tilt.gamma1, vec![0.0]);
        assert!(matches!(cfg.schema, Some(SchemaSource::Inline(_))));
    }

    #[test]
    fn missing_paths_and_unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.json", r#"{"data": "nope.csv", "schema": "s.json", "seed": 1}"#);
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        let p = write(dir.path(), "c2.json", r#"{"seed": 1, "bogus": 2}"#);
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn simulate_section() {
        let cfg: SimulateConfig = serde_json::from_str(
            r#"{"truth": {"source": "synthetic", "n": 2000}, "settings": {"replications": 1, "sample_sizes": [100]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.truth, TruthSource::Synthetic { n: 2000 });
        assert_eq!(cfg.settings.replications, 1);
    }
}
