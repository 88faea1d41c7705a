//! Versioned TOML run configuration. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RateArg;
use crate::particle::{InitialLaw, RecordMode, RunSettings};
use crate::validate::ProbeConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub id: String,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub event_driven: bool,
    pub initial: InitialLaw,
    #[serde(default)]
    pub rate_arg: RateArg,
    #[serde(default = "default_density")]
    pub density_threshold: f64,
    #[serde(default = "default_refinements")]
    pub max_refinements: u32,
    #[serde(default)]
    pub record: RecordMode,
}

fn default_density() -> f64 {
    1.0
}

fn default_refinements() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n: Vec<usize>,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    /// Defaults to 16 × the largest N.
    #[serde(default)]
    pub ensemble_size: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Reuse a flow written by an earlier sweep instead of solving.
    #[serde(default)]
    pub flow_file: Option<PathBuf>,
}

fn default_tol() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    10
}

impl Default for LimitSection {
    fn default() -> Self {
        Self {
            ensemble_size: None,
            tol: default_tol(),
            max_iter: default_max_iter(),
            flow_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// N values to diagnose; defaults to the sweep list.
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default = "default_diag_replicas")]
    pub replicas: usize,
    #[serde(default = "default_max_moment")]
    pub max_moment: u32,
    /// Tail thresholds for `C_N(T)/N`; defaults to 1.5× and 2× the mean
    /// at the largest N.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

fn default_diag_replicas() -> usize {
    8
}

fn default_max_moment() -> u32 {
    4
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n: None,
            replicas: default_diag_replicas(),
            max_moment: default_max_moment(),
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub run: RunSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub limit: LimitSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| e.context(format!("config {}", path.display())))
    }

    /// Recovers the configuration embedded in a report manifest.
    pub fn from_manifest(manifest: &serde_json::Value) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_value(manifest["config"].clone())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sweep.n.is_empty() {
            return Err(Error::Config("sweep.n must list at least one N".into()));
        }
        if self.sweep.n.contains(&0) {
            return Err(Error::Config("sweep.n entries must be positive".into()));
        }
        if self.sweep.n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep.n must be strictly increasing".into()));
        }
        if self.sweep.replicas == 0 {
            return Err(Error::Config("sweep.replicas must be at least 1".into()));
        }
        if !self.run.event_driven && self.run.dt.is_none() {
            return Err(Error::Config(
                "run.dt is required unless run.event_driven = true".into(),
            ));
        }
        if !(self.limit.tol > 0.0) {
            return Err(Error::Config("limit.tol must be positive".into()));
        }
        if self.limit.max_iter == 0 {
            return Err(Error::Config("limit.max_iter must be at least 1".into()));
        }
        if self.limit.ensemble_size == Some(0) {
            return Err(Error::Config("limit.ensemble_size must be at least 1".into()));
        }
        if !(1..=4).contains(&self.diagnostics.max_moment) {
            return Err(Error::Config("diagnostics.max_moment must be in 1..=4".into()));
        }
        self.settings()?.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Time-stepping settings. Event-driven runs without `dt` report on a
    /// grid of 100 intervals.
    pub fn settings(&self) -> Result<RunSettings> {
        let r = &self.run;
        let dt = r.dt.unwrap_or(r.horizon / 100.0);
        Ok(RunSettings {
            horizon: r.horizon,
            dt,
            event_driven: r.event_driven,
            initial: r.initial.clone(),
            rate_arg: r.rate_arg,
            density_threshold: r.density_threshold,
            max_refinements: r.max_refinements,
            record: r.record,
        })
    }

    pub fn n_max(&self) -> usize {
        self.sweep.n.iter().copied().max().unwrap_or(1)
    }

    pub fn ensemble_size(&self) -> usize {
        self.limit.ensemble_size.unwrap_or(16 * self.n_max())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
schema_version = 1
seed = 7

[model]
id = "lipschitz-demo"

[run]
horizon = 1.0
dt = 0.05
initial = { kind = "normal", mean = 0.0, sd = 1.0 }

[sweep]
n = [8, 16, 32]
replicas = 2
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.ensemble_size(), 512);
        assert_eq!(cfg.settings().unwrap().n_steps(), 20);
        let again = SimConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let manifest = serde_json::json!({ "config": cfg });
        assert_eq!(SimConfig::from_manifest(&manifest).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(SimConfig::from_toml_str(&unknown).is_err());
        let typo = MINIMAL.replace("replicas = 2", "replica = 2");
        assert!(SimConfig::from_toml_str(&typo).is_err());
        let order = MINIMAL.replace("[8, 16, 32]", "[16, 8]");
        assert!(SimConfig::from_toml_str(&order).is_err());
        let version = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(SimConfig::from_toml_str(&version).is_err());
        let no_dt = MINIMAL.replace("dt = 0.05", "");
        assert!(SimConfig::from_toml_str(&no_dt).is_err());
        let horizon = MINIMAL.replace("horizon = 1.0", "horizon = -1.0");
        assert!(SimConfig::from_toml_str(&horizon).is_err());
    }
}
