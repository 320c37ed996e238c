//! Parameter sweeps: a TOML file of override combinations expanded into
//! one run directory per (combination, algorithm, seed).
//!
//! ```toml
//! seeds = [1, 2, 3]                  # optional, default: the base seed
//! algorithms = ["dqn", "gat-dqn"]    # optional, default: the base algorithm
//!
//! [[combo]]
//! name = "beta-1-2-3"
//! overrides = ["env.beta=[1, 2, 3]", "env.c1=9"]
//!
//! [vary]                             # optional cartesian product
//! "env.delta_mhz" = [0.54, 0.18]
//! ```
//!
//! A file with no combos, no `vary` table and no lists yields the base
//! configuration as a single run.

use crate::config::{Algorithm, RunConfig};
use crate::error::{config_err, Result};
use crate::trainer::{run_experiment, RunSummary};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Combo {
    pub name: String,
    #[serde(default)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub combo: Vec<Combo>,
    pub vary: BTreeMap<String, Vec<toml::Value>>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(format!("sweep: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// One fully resolved run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub label: String,
    pub dir: PathBuf,
    pub config: RunConfig,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string().replace([' ', '[', ']'], "").replace(',', "-"),
    }
}

/// Expands `spec` over the base config text. `extra` overrides apply to
/// every run before the sweep's own.
pub fn expand(base: &str, extra: &[String], spec: &SweepSpec, out: &Path) -> Result<Vec<SweepRun>> {
    let base_cfg = RunConfig::with_overrides(base, extra)?;
    let combos = if spec.combo.is_empty() { vec![Combo::default()] } else { spec.combo.clone() };
    let mut grid: Vec<(Vec<String>, Vec<String>)> = vec![(Vec::new(), Vec::new())];
    for (key, values) in &spec.vary {
        if values.is_empty() {
            return Err(config_err(format!("sweep: vary.{key} has no values")));
        }
        grid = grid
            .into_iter()
            .flat_map(|(ovs, labels)| {
                values.iter().map(move |v| {
                    let short = key.rsplit('.').next().unwrap_or(key);
                    let mut o = ovs.clone();
                    o.push(format!("{key}={v}"));
                    let mut l = labels.clone();
                    l.push(format!("{short}-{}", value_label(v)));
                    (o, l)
                })
            })
            .collect();
    }
    let algorithms = if spec.algorithms.is_empty() { vec![base_cfg.algorithm] } else { spec.algorithms.clone() };
    let seeds = if spec.seeds.is_empty() { vec![base_cfg.seed] } else { spec.seeds.clone() };
    let single = spec.combo.is_empty() && spec.vary.is_empty() && spec.algorithms.is_empty() && spec.seeds.is_empty();

    let mut runs = Vec::new();
    for combo in &combos {
        for (vary_ovs, vary_labels) in &grid {
            let mut group: Vec<String> = Vec::new();
            if !combo.name.is_empty() {
                group.push(combo.name.clone());
            }
            group.extend(vary_labels.iter().cloned());
            let group = if group.is_empty() { "base".to_string() } else { group.join("_") };
            for &algorithm in &algorithms {
                for &seed in &seeds {
                    let mut ovs = extra.to_vec();
                    ovs.extend(combo.overrides.iter().cloned());
                    ovs.extend(vary_ovs.iter().cloned());
                    ovs.push(format!("algorithm=\"{algorithm}\""));
                    ovs.push(format!("seed={seed}"));
                    let config = RunConfig::with_overrides(base, &ovs)?;
                    let label = format!("{group}/{algorithm}/seed{seed}");
                    let dir = if single { out.to_path_buf() } else { out.join(&group).join(algorithm.name()).join(format!("seed{seed}")) };
                    runs.push(SweepRun { label, dir, config });
                }
            }
        }
    }
    Ok(runs)
}

/// Executes the runs on up to `jobs` threads. Results keep the input order.
pub fn execute(runs: &[SweepRun], jobs: usize) -> Vec<Result<RunSummary>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, runs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(run) = runs.get(i) else { break };
                let r = run_experiment(&run.config, &run.dir);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every run executed")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sweep_is_one_run_in_out() {
        let runs = expand("periods = 5", &[], &SweepSpec::default(), Path::new("/tmp/x")).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].dir, Path::new("/tmp/x"));
        assert_eq!(runs[0].config, RunConfig::from_toml_str("periods = 5").unwrap());
    }

    #[test]
    fn combos_vary_algorithms_and_seeds_multiply() {
        let spec = SweepSpec::from_toml_str(
            r#"
            seeds = [1, 2]
            algorithms = ["hard", "dqn"]
            [[combo]]
            name = "b111"
            overrides = ["env.beta=[1,1,1]", "env.c1=6"]
            [[combo]]
            name = "b123"
            overrides = ["env.beta=[1,2,3]", "env.c1=9"]
            [vary]
            "env.delta_mhz" = [0.54, 0.18]
            "#,
        )
        .unwrap();
        let runs = expand("", &["periods=7".into()], &spec, Path::new("out")).unwrap();
        assert_eq!(runs.len(), 2 * 2 * 2 * 2);
        let r = runs.iter().find(|r| r.label == "b123_delta_mhz-0.18/dqn/seed2").unwrap();
        assert_eq!(r.config.env.beta, [1.0, 2.0, 3.0]);
        assert_eq!(r.config.env.c1, 9.0);
        assert_eq!(r.config.env.delta_mhz, 0.18);
        assert_eq!(r.config.periods, 7);
        assert_eq!(r.dir, Path::new("out/b123_delta_mhz-0.18/dqn/seed2"));
        let dirs: std::collections::HashSet<_> = runs.iter().map(|r| r.dir.clone()).collect();
        assert_eq!(dirs.len(), runs.len());
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        assert!(SweepSpec::from_toml_str("seedz = [1]").is_err());
        let spec = SweepSpec::from_toml_str("[[combo]]\nname = \"x\"\noverrides = [\"env.c3=2\"]").unwrap();
        assert!(expand("", &[], &spec, Path::new("o")).is_err());
    }
}
