//! Long-format plot data from run directories.
//!
//! Each output row is `run, algorithm, seed, period, metric, stat, value`
//! where `stat` is `mean` (average over BSs in that period) or `median`
//! (trailing rolling median of the mean series).

use crate::error::{config_err, Result};
use crate::trainer::{rolling_median, SUMMARY_FIELDS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
struct MetricsRecord {
    period: u64,
    algorithm: String,
    seed: u64,
    se: f64,
    ssr_volte: f64,
    ssr_embb: f64,
    ssr_urllc: f64,
    mean_ssr: f64,
    utility: f64,
    reward: f64,
}

impl MetricsRecord {
    fn fields(&self) -> [f64; 7] {
        [self.utility, self.reward, self.se, self.ssr_volte, self.ssr_embb, self.ssr_urllc, self.mean_ssr]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub run: String,
    pub algorithm: String,
    pub seed: u64,
    pub period: u64,
    pub metric: &'static str,
    pub stat: &'static str,
    pub value: f64,
}

/// Every directory under `root` (itself included) that holds a metrics.csv.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("metrics.csv").is_file() {
            found.push(dir.clone());
        }
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Per-period means and rolling medians of one run's metrics.csv.
pub fn run_series(dir: &Path, label: &str, window: usize) -> Result<Vec<PlotRow>> {
    let mut reader = csv::Reader::from_path(dir.join("metrics.csv"))?;
    let mut sums: BTreeMap<u64, ([f64; 7], usize)> = BTreeMap::new();
    let mut meta: Option<(String, u64)> = None;
    for rec in reader.deserialize() {
        let r: MetricsRecord = rec?;
        let e = sums.entry(r.period).or_insert(([0.0; 7], 0));
        for (s, v) in e.0.iter_mut().zip(r.fields()) {
            *s += v;
        }
        e.1 += 1;
        meta.get_or_insert((r.algorithm, r.seed));
    }
    let (algorithm, seed) = meta.ok_or_else(|| config_err(format!("{} has no metrics rows", dir.display())))?;
    let periods: Vec<u64> = sums.keys().copied().collect();
    let mut rows = Vec::new();
    for (i, metric) in SUMMARY_FIELDS.iter().enumerate() {
        let means: Vec<f64> = sums.values().map(|(s, n)| s[i] / *n as f64).collect();
        let medians = rolling_median(&means, window);
        for (stat, series) in [("mean", &means), ("median", &medians)] {
            rows.extend(periods.iter().zip(series.iter()).map(|(&period, &value)| PlotRow {
                run: label.to_string(),
                algorithm: algorithm.clone(),
                seed,
                period,
                metric,
                stat,
                value,
            }));
        }
    }
    Ok(rows)
}

/// Writes plot rows for every run found under `root` to `out`.
pub fn write(root: &Path, window: usize, out: impl Write) -> Result<usize> {
    let runs = find_runs(root)?;
    if runs.is_empty() {
        return Err(config_err(format!("no metrics.csv under {}", root.display())));
    }
    let mut w = csv::Writer::from_writer(out);
    for dir in &runs {
        let label = dir.strip_prefix(root).ok().map(|p| p.to_string_lossy().into_owned()).filter(|s| !s.is_empty()).unwrap_or_else(|| ".".into());
        for row in run_series(dir, &label, window)? {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(runs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Algorithm, RunConfig};
    use crate::trainer::run_experiment;

    #[test]
    fn series_average_over_bss() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::desk();
        cfg.algorithm = Algorithm::Hard;
        cfg.periods = 4;
        cfg.scenario.subscribers = [5, 5, 5];
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        let rows = run_series(dir.path(), "x", 2).unwrap();
        assert_eq!(rows.len(), 4 * 2 * SUMMARY_FIELDS.len());
        for (t, p) in summary.periods.iter().enumerate() {
            let u = rows.iter().find(|r| r.metric == "utility" && r.stat == "mean" && r.period == t as u64).unwrap();
            assert!((u.value - p.utility).abs() < 1e-9);
        }
        let mut buf = Vec::new();
        assert_eq!(write(dir.path(), 2, &mut buf).unwrap(), 1);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run,algorithm,seed,period,metric,stat,value\n"));
    }
}
