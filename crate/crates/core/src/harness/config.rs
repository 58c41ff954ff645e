//! Experiment configuration files (TOML) with `EXECLAB_` environment overrides.
//!
//! An override variable maps onto a dotted key path with `__` as separator, so
//! `EXECLAB_MARKET__KAPPA=0.002` sets `market.kappa` and
//! `EXECLAB_DQN__TRAINING_EPISODES=2000` sets `dqn.training_episodes`. Values
//! are parsed as TOML literals and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::error::{Error, Result};
use crate::market::MarketParams;
use crate::schedule::ScheduleLearnerConfig;

pub const ENV_PREFIX: &str = "EXECLAB_";

/// The shipped baseline DDQN preset.
pub const TABLE1_PRESET: &str = include_str!("../../configs/table1.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Bench,
    Schedule,
    Dqn,
    Sweep,
}

/// A benchmark schedule the fixed player follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentSchedule {
    AggNash,
    OwnNash,
    Twap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub fixed_player: usize,
    pub fix_opponent: Option<OpponentSchedule>,
    pub learner: ScheduleLearnerConfig,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            fixed_player: 1,
            fix_opponent: None,
            learner: ScheduleLearnerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Training horizons; the epsilon floor episode stays fixed across them.
    pub horizons: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            horizons: vec![10_000, 20_000, 30_000, 40_000, 50_000, 60_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub base_seed: u64,
    pub runs: usize,
    /// Worker threads for independent runs; 0 uses every core.
    #[serde(default)]
    pub parallel: usize,
    pub output_dir: PathBuf,
    pub market: MarketParams,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Every violation, each prefixed with its section.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.name.is_empty()
            || self.name.contains(['/', '\\'])
            || self.name == "."
            || self.name == ".."
        {
            v.push(format!(
                "name: {:?} is not a valid directory name",
                self.name
            ));
        }
        if self.runs == 0 {
            v.push("runs: must be >= 1".into());
        }
        if let Err(e) = self.market.validate() {
            v.push(format!("market: {}", strip(e)));
        }
        let n = self.market.n_slices;
        if matches!(
            self.kind,
            ExperimentKind::Schedule | ExperimentKind::Dqn | ExperimentKind::Sweep
        ) && self.market.n_players() != 2
        {
            v.push(format!(
                "market.q0: the {:?} experiment needs two players",
                self.kind
            ));
        }
        if self.kind == ExperimentKind::Schedule {
            if let Err(e) = self.schedule.learner.validate(n) {
                v.push(format!("schedule.learner: {}", strip(e)));
            }
            if self.schedule.fixed_player >= self.market.n_players() {
                v.push(format!(
                    "schedule.fixed_player: {} is not a player",
                    self.schedule.fixed_player
                ));
            }
        }
        if matches!(self.kind, ExperimentKind::Dqn | ExperimentKind::Sweep) {
            if let Err(e) = self.dqn.validate(n) {
                v.push(format!("dqn: {}", strip(e)));
            }
        }
        if self.kind == ExperimentKind::Sweep
            && (self.sweep.horizons.is_empty() || self.sweep.horizons.contains(&0))
        {
            v.push("sweep.horizons: must list positive episode counts".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Directory holding every output of this experiment.
    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(s) => s,
        e => e.to_string(),
    }
}

/// Sets dotted-path keys on a TOML tree; `vars` yields `(NAME, value)` pairs.
pub fn apply_env_overrides<I>(doc: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("{key}: malformed override name")));
        }
        let value = parse_literal(&raw);
        let mut table = &mut *doc;
        for (i, seg) in path.iter().enumerate() {
            if i + 1 == path.len() {
                table.insert(seg.clone(), value.clone());
            } else {
                let entry = table
                    .entry(seg.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                table = entry.as_table_mut().ok_or_else(|| {
                    Error::Config(format!("{key}: {} is not a section", path[..=i].join(".")))
                })?;
            }
        }
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let snippet = format!("v = {raw}");
    match snippet.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parses and validates a config; errors carry the offending field path.
pub fn parse_config<I>(text: &str, overrides: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    apply_env_overrides(&mut doc, overrides)?;
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().message().to_string();
            Error::Config(if path == "." {
                inner
            } else {
                format!("{path}: {inner}")
            })
        })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path`, applies `EXECLAB_*` variables from the process environment and validates.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, std::env::vars())
}
