//! Run configuration: one TOML document drives every command.
//!
//! ```toml
//! seed = 7
//! [data]
//! source = "synthetic"
//! n_train = 8
//! [env]
//! capacity = 1.2
//! [hyperparams]
//! actor_lr = 1e-4
//! training_iterations = 20000
//! ```
//!
//! Keys can be overridden with dotted paths (`hyperparams.gamma=0.95`).
//! A run manifest is itself a valid configuration: its `[provenance]` table
//! is ignored on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::HyperParams;
use crate::data::{CustomerId, SyntheticProfile};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, RunSeeds};

/// Battery sizes studied in the size sweep, kWh.
pub const SWEEP_CAPACITIES: [f64; 10] = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated weeks, see [`SyntheticProfile`].
    Synthetic,
    /// A raw Ausgrid solar home CSV.
    Ausgrid,
    /// One household in the normalized CSV layout written by `ingest`.
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    /// Household to use from an Ausgrid file. When absent, the lowest id with
    /// enough complete weeks is chosen.
    pub customer: Option<CustomerId>,
    pub year: i32,
    pub n_train: usize,
    pub split_seed: u64,
    pub synthetic_weeks: usize,
    pub synthetic_seed: u64,
    pub synthetic: SyntheticProfile,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            customer: None,
            year: 2013,
            n_train: 8,
            split_seed: 0,
            synthetic_weeks: 15,
            synthetic_seed: 0,
            synthetic: SyntheticProfile::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Minimum number of iterations between validation evaluations. Checked
    /// at episode ends, so evaluation never interrupts an episode.
    pub eval_interval: usize,
    /// Index into the training weeks of the fixed validation week.
    pub validation_week: usize,
    /// Keep the snapshot with the best validation reward as the run's
    /// checkpoint (the last snapshot is saved as well).
    pub keep_best: bool,
    /// One episode spans the whole training split instead of one week.
    pub paper_mode: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            eval_interval: crate::data::SLOTS_PER_WEEK,
            validation_week: 0,
            keep_best: true,
            paper_mode: false,
        }
    }
}

/// Hyperparameter search space: the grid cross product of the two width
/// axes, with `draws_per_cell` learning-rate draws per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub actor_hiddens: Vec<Vec<usize>>,
    pub critic_hiddens: Vec<Vec<usize>>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub log_uniform: bool,
    pub draws_per_cell: usize,
    /// Number of trials to run, at most the full enumeration. Trials are
    /// enumerated draw by draw, so 12 trials cover the 3x4 grid once.
    pub trials: Option<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            actor_hiddens: vec![vec![200, 200], vec![300, 300], vec![400, 400]],
            critic_hiddens: vec![vec![200, 200], vec![300, 300], vec![400, 400], vec![500, 500]],
            lr_min: 1e-7,
            lr_max: 1e-1,
            log_uniform: false,
            draws_per_cell: 6,
            trials: None,
        }
    }
}

impl SearchSpace {
    pub fn grid_size(&self) -> usize {
        self.actor_hiddens.len() * self.critic_hiddens.len()
    }

    pub fn trial_count(&self) -> usize {
        self.trials.unwrap_or(self.grid_size() * self.draws_per_cell)
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("search.{k}");
        for (k, axis) in [("actor_hiddens", &self.actor_hiddens), ("critic_hiddens", &self.critic_hiddens)] {
            if axis.is_empty() {
                return Err(Error::config_at(key(k), "axis is empty"));
            }
            if axis.iter().any(|h| h.contains(&0)) {
                return Err(Error::config_at(key(k), "layer widths must be positive"));
            }
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::config_at(key("lr_min"), "need 0 < lr_min < lr_max"));
        }
        if self.draws_per_cell == 0 {
            return Err(Error::config_at(key("draws_per_cell"), "must be at least 1"));
        }
        let full = self.grid_size() * self.draws_per_cell;
        match self.trials {
            Some(0) => Err(Error::config_at(key("trials"), "must be at least 1")),
            Some(n) if n > full => Err(Error::config_at(
                key("trials"),
                format!("{n} exceeds the {full} enumerated trials"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub capacities: Vec<f64>,
    /// Size whose test rollouts are exported for the daily profile; the
    /// largest size when absent.
    pub profile_capacity: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            capacities: SWEEP_CAPACITIES.to_vec(),
            profile_capacity: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.capacities;
        if c.is_empty() || c.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config_at("sweep.capacities", "need at least one positive size"));
        }
        if c.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config_at("sweep.capacities", "sizes must be strictly increasing"));
        }
        if let Some(p) = self.profile_capacity {
            if !c.iter().any(|v| (v - p).abs() < 1e-12) {
                return Err(Error::config_at("sweep.profile_capacity", "not one of the sweep sizes"));
            }
        }
        Ok(())
    }

    pub fn profile_capacity(&self) -> f64 {
        self.profile_capacity
            .unwrap_or_else(|| self.capacities.last().copied().unwrap_or(1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub soc_levels: usize,
    pub action_levels: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            soc_levels: 33,
            action_levels: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every run, size and trial seed derives from it.
    pub seed: u64,
    pub data: DataConfig,
    pub env: EnvConfig,
    pub hyperparams: HyperParams,
    pub training: TrainingConfig,
    pub search: SearchSpace,
    pub sweep: SweepConfig,
    pub oracle: OracleConfig,
}

const PROVENANCE_KEY: &str = "provenance";

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse a document, then apply `key=value` overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid TOML: {}", e.message())))?;
        table.remove(PROVENANCE_KEY);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            if path == "." {
                Error::config(message)
            } else {
                Error::config_at(path, message)
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_toml_with_overrides(&self.to_toml()?, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize configuration: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.hyperparams.validate()?;
        self.search.validate()?;
        self.sweep.validate()?;
        let d = &self.data;
        if d.n_train == 0 {
            return Err(Error::config_at("data.n_train", "must be at least 1"));
        }
        if d.source != DataSource::Synthetic && d.path.is_none() {
            return Err(Error::config_at("data.path", "required for file data sources"));
        }
        if d.source == DataSource::Synthetic && d.synthetic_weeks <= d.n_train {
            return Err(Error::config_at(
                "data.synthetic_weeks",
                "must exceed data.n_train so the test split is non-empty",
            ));
        }
        if self.training.eval_interval == 0 {
            return Err(Error::config_at("training.eval_interval", "must be at least 1"));
        }
        if self.training.validation_week >= d.n_train {
            return Err(Error::config_at("training.validation_week", "must index a training week"));
        }
        if self.oracle.soc_levels < 2 {
            return Err(Error::config_at("oracle.soc_levels", "must be at least 2"));
        }
        if self.oracle.action_levels < 2 {
            return Err(Error::config_at("oracle.action_levels", "must be at least 2"));
        }
        Ok(())
    }

    pub fn run_seeds(&self) -> RunSeeds {
        RunSeeds::from_root(self.seed)
    }

    /// Root seed of the `i`-th size in a sweep.
    pub fn sweep_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, 1_000 + i as u64)
    }

    /// Root seed of trial `i` in a search.
    pub fn trial_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, 2_000 + i as u64)
    }

    /// Seed of the learning-rate draws in a search.
    pub fn search_seed(&self) -> u64 {
        derive_seed(self.seed, 3_000)
    }
}

/// Set `a.b.c=value` inside `table`. The value is read as a TOML literal
/// when possible (`0.5`, `true`, `[64, 64]`, `"x"`) and as a bare string
/// otherwise. Key validity is checked when the table is deserialized.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key `{key}` is malformed")));
    }
    let value = parse_literal(raw.trim());
    let mut cur = table;
    for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config_at(parts[..=depth].join("."), "is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Where a run came from. Written next to every output as `manifest.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub overrides: Vec<String>,
    /// Derived seeds in hexadecimal (TOML integers are signed 64-bit).
    pub seeds: Vec<String>,
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    provenance: &'a Provenance,
}

impl Provenance {
    pub fn new(command: &str, overrides: &[String], config: &RunConfig) -> Self {
        let s = config.run_seeds();
        Provenance {
            tool: "solarbatt".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            overrides: overrides.to_vec(),
            seeds: [("init", s.init), ("noise", s.noise), ("replay", s.replay), ("episodes", s.episodes)]
                .iter()
                .map(|(k, v)| format!("{k}={v:016x}"))
                .collect(),
        }
    }
}

/// Resolved configuration followed by a `[provenance]` table.
pub fn manifest_toml(config: &RunConfig, provenance: &Provenance) -> Result<String> {
    toml::to_string(&ManifestDoc { config, provenance })
        .map_err(|e| Error::config(format!("cannot serialize manifest: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::default()
            .with_overrides(&[
                "hyperparams.gamma=0.5".into(),
                "env.capacity=1.4".into(),
                "hyperparams.actor_hiddens=[8, 8]".into(),
                "hyperparams.gamma=0.25".into(),
                "data.source=normalized".into(),
                "data.path=some/file.csv".into(),
            ])
            .unwrap();
        assert_eq!(c.hyperparams.gamma, 0.25);
        assert_eq!(c.env.capacity, 1.4);
        assert_eq!(c.hyperparams.actor_hiddens, vec![8, 8]);
        assert_eq!(c.data.path, Some(PathBuf::from("some/file.csv")));
    }

    fn config_path(r: Result<RunConfig>) -> Option<String> {
        match r {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        let base = RunConfig::default();
        assert_eq!(
            config_path(base.with_overrides(&["hyperparams.gama=0.5".into()])).as_deref(),
            Some("hyperparams.gama")
        );
        assert_eq!(
            config_path(base.with_overrides(&["hyperparams.gamma=\"x\"".into()])).as_deref(),
            Some("hyperparams.gamma")
        );
        assert_eq!(
            config_path(base.with_overrides(&["hyperparams.gamma=2".into()])).as_deref(),
            Some("hyperparams.gamma")
        );
        assert_eq!(
            config_path(base.with_overrides(&["env.capacity=-1".into()])).as_deref(),
            Some("env.capacity")
        );
        assert_eq!(
            config_path(RunConfig::from_toml_str("[env]\ncapacity = \"big\"\n")).as_deref(),
            Some("env.capacity")
        );
        assert_eq!(
            config_path(base.with_overrides(&["sweep.capacities=[0.4, 0.2]".into()])).as_deref(),
            Some("sweep.capacities")
        );
        assert!(matches!(base.with_overrides(&["nonsense".into()]), Err(Error::Config { .. })));
    }

    #[test]
    fn manifest_reloads_as_config() {
        let c = RunConfig::default()
            .with_overrides(&["seed=99".into(), "hyperparams.actor_lr=0.000123456789".into()])
            .unwrap();
        let p = Provenance::new("train", &["seed=99".into()], &c);
        let text = manifest_toml(&c, &p).unwrap();
        assert!(text.contains("[provenance]"));
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn search_trial_counts() {
        let s = SearchSpace::default();
        assert_eq!(s.trial_count(), 72);
        let s = SearchSpace {
            draws_per_cell: 1,
            ..SearchSpace::default()
        };
        assert_eq!(s.trial_count(), 12);
        let bad = SearchSpace {
            actor_hiddens: vec![],
            ..SearchSpace::default()
        };
        assert!(bad.validate().is_err());
    }
}
