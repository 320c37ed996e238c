//! Run configuration: one TOML document with a table per component,
//! optional `key.path=value` overrides, and validation.

use crate::env::EnvConfig;
use crate::error::{config_err, Error, Result};
use crate::neural::{BrainConfig, Learner, NetDims};
use crate::radio::RadioConfig;
use crate::scenario::ScenarioConfig;
use crate::traffic::TrafficConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "dqn")]
    Dqn,
    #[serde(rename = "gat-dqn")]
    GatDqn,
    #[serde(rename = "a2c")]
    A2c,
    #[serde(rename = "gat-a2c")]
    GatA2c,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Hard, Algorithm::Dqn, Algorithm::GatDqn, Algorithm::A2c, Algorithm::GatA2c];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hard => "hard",
            Algorithm::Dqn => "dqn",
            Algorithm::GatDqn => "gat-dqn",
            Algorithm::A2c => "a2c",
            Algorithm::GatA2c => "gat-a2c",
        }
    }

    pub fn learner(self) -> Option<Learner> {
        match self {
            Algorithm::Hard => None,
            Algorithm::Dqn | Algorithm::GatDqn => Some(Learner::Dqn),
            Algorithm::A2c | Algorithm::GatA2c => Some(Learner::A2c),
        }
    }

    pub fn uses_gat(self) -> bool {
        matches!(self, Algorithm::GatDqn | Algorithm::GatA2c)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| config_err(format!("unknown algorithm `{s}` (expected hard, dqn, gat-dqn, a2c or gat-a2c)")))
    }
}

/// Learner hyper-parameters shared by every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub embed_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub attention_temperature: f64,
    pub dueling: bool,
    pub double: bool,
    pub lr: f64,
    pub actor_lr: f64,
    pub entropy_weight: f64,
    /// Truncation of the actor's importance ratio for replayed actions.
    pub importance_clip: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Periods between target-network syncs.
    pub target_sync: usize,
    /// Final probability of acting on the learned policy.
    pub epsilon_max: f64,
    /// Share of the run spent acting uniformly at random.
    pub warmup_fraction: f64,
    /// Share of the post-warmup periods over which epsilon ramps up.
    pub ramp_fraction: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            embed_dim: 32,
            key_dim: 32,
            value_dim: 8,
            heads: 8,
            hidden: 128,
            attention_temperature: 1.0,
            dueling: true,
            double: true,
            lr: 1e-3,
            actor_lr: 3e-4,
            entropy_weight: 0.01,
            importance_clip: 1.0,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync: 100,
            epsilon_max: 0.95,
            warmup_fraction: 0.2,
            ramp_fraction: 0.5,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.embed_dim, self.key_dim, self.value_dim, self.heads, self.hidden, self.batch_size, self.replay_capacity, self.target_sync];
        if dims.contains(&0) {
            return Err(config_err("agent: sizes, batch, capacity and sync interval must be positive"));
        }
        if !(self.lr > 0.0 && self.actor_lr > 0.0 && self.entropy_weight >= 0.0 && self.attention_temperature > 0.0 && self.importance_clip > 0.0) {
            return Err(config_err("agent: learning rates, temperature and importance clip must be > 0, entropy weight >= 0"));
        }
        if !(0.0..1.0).contains(&self.epsilon_max) {
            return Err(config_err("agent.epsilon_max must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) || !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(config_err("agent: warmup_fraction in [0, 1), ramp_fraction in (0, 1]"));
        }
        Ok(())
    }

    pub fn brain_config(&self, learner: Learner, gat: bool, inputs: usize, actions: usize, gamma: f64) -> BrainConfig {
        BrainConfig {
            dims: NetDims { inputs, embed: self.embed_dim, key: self.key_dim, value: self.value_dim, heads: self.heads, hidden: self.hidden, actions },
            learner,
            gat,
            dueling: self.dueling,
            double: self.double,
            gamma,
            tau: self.attention_temperature,
            lr: self.lr,
            actor_lr: self.actor_lr,
            entropy_weight: self.entropy_weight,
            importance_clip: self.importance_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Periods between parameter checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Periods between progress lines on stderr; 0 disables them.
    pub log_interval: usize,
    /// Trailing window of the rolling medians in summary.csv.
    pub median_window: usize,
    /// Checkpoint directory whose parameters initialise the agents.
    pub resume_from: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { checkpoint_interval: 0, log_interval: 0, median_window: 50, resume_from: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub periods: usize,
    pub algorithm: Algorithm,
    pub scenario: ScenarioConfig,
    pub traffic: TrafficConfig,
    pub radio: RadioConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            periods: 3000,
            algorithm: Algorithm::GatDqn,
            scenario: ScenarioConfig::default(),
            traffic: TrafficConfig::default(),
            radio: RadioConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// The 7-BS, 300-subscriber scenario used for quick experiments.
    pub fn desk() -> Self {
        let mut cfg = RunConfig::default();
        cfg.scenario.rings = 1;
        cfg.scenario.subscribers = [50, 100, 150];
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods == 0 {
            return Err(config_err("periods must be positive"));
        }
        self.scenario.validate()?;
        self.traffic.validate()?;
        self.radio.validate()?;
        self.env.validate()?;
        self.agent.validate()?;
        if self.output.median_window == 0 {
            return Err(config_err("output.median_window must be positive"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` on top of the defaults, applies `key.path=value`
    /// overrides in order, and validates the result.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e| config_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `doc`, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| config_err(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override `{spec}` has an empty key")));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| config_err(format!("override `{spec}`: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::desk();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_apply_in_order() {
        let ov = vec!["env.beta=[1.0, 2.0, 3.0]".to_string(), "algorithm=a2c".into(), "seed=7".into(), "seed=8".into(), "env.delta_mhz=0.18".into()];
        let cfg = RunConfig::with_overrides("periods = 10", &ov).unwrap();
        assert_eq!(cfg.env.beta, [1.0, 2.0, 3.0]);
        assert_eq!(cfg.algorithm, Algorithm::A2c);
        assert_eq!(cfg.seed, 8);
        assert_eq!(cfg.periods, 10);
        assert_eq!(cfg.env.units(), 55);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sede = 3").is_err());
        assert!(RunConfig::from_toml_str("[env]\nbetta = [1,1,1]").is_err());
        assert!(RunConfig::with_overrides("", &["env.c3=1.5".into()]).is_err());
        assert!(RunConfig::with_overrides("", &["algorithm=ppo".into()]).is_err());
        assert!(RunConfig::with_overrides("", &["novalue".into()]).is_err());
        assert!(RunConfig::with_overrides("", &["env.delta_mhz=4.0".into()]).is_err());
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!(!Algorithm::Dqn.uses_gat());
        assert!(Algorithm::GatA2c.uses_gat());
        assert_eq!(Algorithm::Hard.learner(), None);
    }
}
