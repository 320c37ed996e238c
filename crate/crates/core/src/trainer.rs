//! Training loop: random warm-up, ε-greedy interaction, per-agent replay
//! and updates, target syncs, and metric emission.

use crate::checkpoint;
use crate::config::{Algorithm, RunConfig};
use crate::env::{Env, StepOutcome};
use crate::error::{Error, Result};
use crate::neural::{sample_action, Brain, Learner, LocalGraph, LocalObs, Transition};
use crate::rng::{stream, Domain};
use crate::slice::NUM_SLICES;
use crate::tensor::Tensor;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

/// Fixed-capacity ring buffer of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: Vec::new(), head: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// `n` distinct transitions drawn uniformly (all of them if fewer).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Probability of acting on the learned policy: zero during warm-up, then a
/// linear ramp to `max`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub warmup: usize,
    pub ramp: usize,
    pub max: f64,
}

impl EpsilonSchedule {
    pub fn new(periods: usize, warmup_fraction: f64, ramp_fraction: f64, max: f64) -> Self {
        let warmup = ((periods as f64) * warmup_fraction + 1e-9).floor() as usize;
        let ramp = (((periods - warmup.min(periods)) as f64 * ramp_fraction).ceil() as usize).max(1);
        EpsilonSchedule { warmup, ramp, max }
    }

    pub fn is_warmup(&self, t: usize) -> bool {
        t < self.warmup
    }

    pub fn value(&self, t: usize) -> f64 {
        if t < self.warmup {
            0.0
        } else {
            (self.max * (t - self.warmup) as f64 / self.ramp as f64).min(self.max)
        }
    }
}

/// A learning agent: networks, replay memory and private random streams.
#[derive(Debug, Clone)]
pub struct Agent {
    pub brain: Brain,
    pub replay: ReplayBuffer,
    explore: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(brain: Brain, replay_capacity: usize, seed: u64, index: u64) -> Self {
        Agent {
            brain,
            replay: ReplayBuffer::new(replay_capacity),
            explore: stream(seed, Domain::AgentExplore, index),
            replay_rng: stream(seed, Domain::AgentReplay, index),
        }
    }

    /// With probability `epsilon` follow the policy (greedy Q, or a sample
    /// from the actor), otherwise pick uniformly at random. Returns the
    /// action and the probability this mixture gave it.
    pub fn act(&mut self, obs: &LocalObs, epsilon: f64) -> (usize, f64) {
        let actions = self.brain.cfg.dims.actions;
        let uniform = (1.0 - epsilon) / actions as f64;
        match self.brain.cfg.learner {
            Learner::Dqn => {
                let greedy = self.brain.greedy(obs);
                let a = if self.explore.gen::<f64>() < epsilon { greedy } else { self.explore.gen_range(0..actions) };
                (a, uniform + if a == greedy { epsilon } else { 0.0 })
            }
            Learner::A2c => {
                let pi = self.brain.policy(obs);
                let a = if self.explore.gen::<f64>() < epsilon { sample_action(&pi, &mut self.explore) } else { self.explore.gen_range(0..actions) };
                (a, uniform + epsilon * pi[a])
            }
        }
    }

    /// One update from a fresh minibatch; `None` when the buffer is still
    /// smaller than the batch.
    pub fn learn(&mut self, batch_size: usize) -> Option<f64> {
        if self.replay.len() < batch_size {
            return None;
        }
        let batch = self.replay.sample(&mut self.replay_rng, batch_size);
        Some(self.brain.update(&batch).loss)
    }
}

/// One row of metrics.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub period: u64,
    pub bs_id: usize,
    pub algorithm: &'static str,
    pub seed: u64,
    pub action_index: usize,
    pub c1_units: usize,
    pub c2_units: usize,
    pub c3_units: usize,
    pub se: f64,
    pub ssr_volte: f64,
    pub ssr_embb: f64,
    pub ssr_urllc: f64,
    pub mean_ssr: f64,
    pub utility: f64,
    pub reward: f64,
    pub epsilon: f64,
    pub handovers: usize,
}

/// Averages over all BSs for one period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PeriodAggregate {
    pub utility: f64,
    pub reward: f64,
    pub se: f64,
    pub ssr: [f64; NUM_SLICES],
    pub mean_ssr: f64,
    pub epsilon: f64,
}

impl PeriodAggregate {
    fn from_outcome(out: &StepOutcome, epsilon: f64) -> Self {
        let n = out.metrics.len() as f64;
        let mut a = PeriodAggregate { epsilon, ..Default::default() };
        for (i, m) in out.metrics.iter().enumerate() {
            a.utility += out.utilities[i] / n;
            a.reward += out.rewards[i] / n;
            a.se += m.se / n;
            for s in 0..NUM_SLICES {
                a.ssr[s] += m.ssr[s] / n;
            }
            a.mean_ssr += m.mean_ssr() / n;
        }
        a
    }

    fn fields(&self) -> [f64; 7] {
        [self.utility, self.reward, self.se, self.ssr[0], self.ssr[1], self.ssr[2], self.mean_ssr]
    }
}

/// In-memory record of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub periods: Vec<PeriodAggregate>,
    pub clip_count: u64,
    pub skipped_updates: u64,
}

impl RunSummary {
    /// Mean of the per-period aggregates over the last `window` periods.
    pub fn tail_mean(&self, window: usize) -> PeriodAggregate {
        let tail = &self.periods[self.periods.len().saturating_sub(window)..];
        let n = tail.len().max(1) as f64;
        let mut a = PeriodAggregate::default();
        for p in tail {
            a.utility += p.utility / n;
            a.reward += p.reward / n;
            a.se += p.se / n;
            for s in 0..NUM_SLICES {
                a.ssr[s] += p.ssr[s] / n;
            }
            a.mean_ssr += p.mean_ssr / n;
            a.epsilon += p.epsilon / n;
        }
        a
    }
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trailing rolling median: entry `t` is the median of `values[t+1-w..=t]`
/// (fewer at the start).
pub fn rolling_median(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len()).map(|t| median(&values[(t + 1).saturating_sub(window)..=t])).collect()
}

pub const SUMMARY_FIELDS: [&str; 7] = ["utility", "reward", "se", "ssr_volte", "ssr_embb", "ssr_urllc", "mean_ssr"];

pub fn write_summary(path: &Path, summary: &RunSummary, window: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["period".to_string(), "algorithm".into(), "seed".into()];
    header.extend(SUMMARY_FIELDS.iter().map(|f| f.to_string()));
    header.extend(SUMMARY_FIELDS.iter().map(|f| format!("{f}_median")));
    w.write_record(&header)?;
    let columns: Vec<Vec<f64>> = (0..SUMMARY_FIELDS.len()).map(|i| summary.periods.iter().map(|p| p.fields()[i]).collect()).collect();
    let medians: Vec<Vec<f64>> = columns.iter().map(|c| rolling_median(c, window)).collect();
    for t in 0..summary.periods.len() {
        let mut rec = vec![t.to_string(), summary.algorithm.to_string(), summary.seed.to_string()];
        rec.extend(columns.iter().map(|c| c[t].to_string()));
        rec.extend(medians.iter().map(|c| c[t].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Drives one algorithm on one environment for the configured periods.
pub struct Trainer {
    cfg: RunConfig,
    env: Env,
    agents: Vec<Agent>,
    schedule: EpsilonSchedule,
    t: usize,
    summary: RunSummary,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Env::new(cfg.env.clone(), cfg.scenario.clone(), cfg.traffic.clone(), cfg.radio.clone(), cfg.seed)?;
        let agents = match cfg.algorithm.learner() {
            None => Vec::new(),
            Some(learner) => {
                let gat = cfg.algorithm.uses_gat();
                let bc = cfg.agent.brain_config(learner, gat, NUM_SLICES, env.codec().count(), cfg.env.gamma);
                (0..env.num_bs())
                    .map(|m| {
                        let graph = if gat { LocalGraph::new(&env.scenario().graph, m) } else { LocalGraph::isolated(m) };
                        let brain = Brain::new(bc, graph, &mut stream(cfg.seed, Domain::AgentInit, m as u64));
                        Agent::new(brain, cfg.agent.replay_capacity, cfg.seed, m as u64)
                    })
                    .collect()
            }
        };
        let schedule = EpsilonSchedule::new(cfg.periods, cfg.agent.warmup_fraction, cfg.agent.ramp_fraction, cfg.agent.epsilon_max);
        let summary = RunSummary { algorithm: cfg.algorithm, seed: cfg.seed, periods: Vec::new(), clip_count: 0, skipped_updates: 0 };
        let mut trainer = Trainer { cfg, env, agents, schedule, t: 0, summary };
        if let Some(dir) = trainer.cfg.output.resume_from.clone() {
            trainer.load_checkpoint(Path::new(&dir))?;
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [Agent] {
        &mut self.agents
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        self.schedule
    }

    pub fn period(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.periods
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    fn local_observations(&self) -> Vec<LocalObs> {
        let obs = self.env.observations();
        let prev: Vec<[f64; NUM_SLICES]> = obs.iter().map(|o| o.prev).collect();
        let cur: Vec<[f64; NUM_SLICES]> = obs.iter().map(|o| o.cur).collect();
        self.agents.iter().map(|a| a.brain.local_obs(&prev, &cur)).collect()
    }

    /// Runs one period and returns its metrics rows.
    pub fn step(&mut self) -> Result<Vec<MetricsRow>> {
        let t = self.t;
        let epsilon = if self.agents.is_empty() { 0.0 } else { self.schedule.value(t) };
        let obs = self.local_observations();
        let (actions, behaviour): (Vec<usize>, Vec<f64>) = if self.agents.is_empty() {
            (vec![self.env.hard_action(); self.env.num_bs()], vec![1.0; self.env.num_bs()])
        } else {
            self.agents.iter_mut().zip(&obs).map(|(a, o)| a.act(o, epsilon)).unzip()
        };
        let out = self.env.step(&actions)?;
        if !self.agents.is_empty() {
            let next = self.local_observations();
            let warm = self.schedule.is_warmup(t);
            for (m, agent) in self.agents.iter_mut().enumerate() {
                agent.replay.push(Transition { obs: obs[m].clone(), action: actions[m], reward: out.rewards[m], next_obs: next[m].clone(), behaviour_prob: behaviour[m] });
                if !warm && agent.learn(self.cfg.agent.batch_size).is_none() {
                    self.summary.skipped_updates += 1;
                }
            }
            if !warm && (t + 1 - self.schedule.warmup).is_multiple_of(self.cfg.agent.target_sync) {
                for agent in &mut self.agents {
                    agent.brain.sync_target();
                }
            }
        }
        let rows = self.rows(&out, &actions, epsilon)?;
        self.summary.periods.push(PeriodAggregate::from_outcome(&out, epsilon));
        self.summary.clip_count = self.env.clip_count();
        self.t += 1;
        Ok(rows)
    }

    fn rows(&self, out: &StepOutcome, actions: &[usize], epsilon: f64) -> Result<Vec<MetricsRow>> {
        out.metrics
            .iter()
            .enumerate()
            .map(|(m, met)| {
                let units = self.env.codec().decode3(actions[m])?;
                Ok(MetricsRow {
                    period: out.period,
                    bs_id: m,
                    algorithm: self.cfg.algorithm.name(),
                    seed: self.cfg.seed,
                    action_index: actions[m],
                    c1_units: units[0],
                    c2_units: units[1],
                    c3_units: units[2],
                    se: met.se,
                    ssr_volte: met.ssr[0],
                    ssr_embb: met.ssr[1],
                    ssr_urllc: met.ssr[2],
                    mean_ssr: met.mean_ssr(),
                    utility: out.utilities[m],
                    reward: out.rewards[m],
                    epsilon,
                    handovers: out.handovers[m],
                })
            })
            .collect()
    }

    /// Named parameter tensors of every agent.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.agents
            .iter()
            .enumerate()
            .flat_map(|(m, a)| a.brain.names.iter().zip(&a.brain.params).map(move |(n, p)| (format!("agent/{m}/{n}"), p)))
            .collect()
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.named_params())
    }

    /// Initialises every agent from a checkpoint written by a run with the
    /// same algorithm and network sizes.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let loaded = checkpoint::load(dir)?;
        for (m, agent) in self.agents.iter_mut().enumerate() {
            let params = agent
                .brain
                .names
                .iter()
                .map(|n| {
                    let key = format!("agent/{m}/{n}");
                    loaded.iter().find(|(k, _)| *k == key).map(|(_, t)| t.clone()).ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {key}")))
                })
                .collect::<Result<Vec<_>>>()?;
            agent.brain.load_params(params)?;
        }
        Ok(())
    }

    /// Runs to completion without writing files.
    pub fn run_in_memory(mut self) -> Result<RunSummary> {
        while !self.is_done() {
            self.step()?;
            self.log_progress();
        }
        Ok(self.summary)
    }

    fn log_progress(&self) {
        let every = self.cfg.output.log_interval;
        if every > 0 && self.t.is_multiple_of(every) {
            let p = self.summary.periods.last().copied().unwrap_or_default();
            eprintln!(
                "[{} seed {}] period {}/{} utility {:.4} reward {:.4} epsilon {:.3}",
                self.cfg.algorithm, self.cfg.seed, self.t, self.cfg.periods, p.utility, p.reward, p.epsilon
            );
        }
    }
}

/// Paths of the files a run writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub resolved: PathBuf,
}

impl RunOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        RunOutputs {
            dir: dir.to_path_buf(),
            metrics: dir.join("metrics.csv"),
            summary: dir.join("summary.csv"),
            resolved: dir.join("resolved.config"),
        }
    }
}

/// Runs one configuration, writing metrics.csv, summary.csv,
/// resolved.config and checkpoints under `out`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let paths = RunOutputs::in_dir(out);
    fs::write(&paths.resolved, cfg.to_toml())?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut writer = csv::Writer::from_writer(File::create(&paths.metrics)?);
    let interval = cfg.output.checkpoint_interval;
    while !trainer.is_done() {
        for row in trainer.step()? {
            writer.serialize(row)?;
        }
        trainer.log_progress();
        if interval > 0 && trainer.period() % interval == 0 && !trainer.agents.is_empty() {
            trainer.save_checkpoint(&out.join("checkpoints").join(format!("period_{}", trainer.period())))?;
        }
    }
    writer.flush()?;
    if !trainer.agents.is_empty() {
        trainer.save_checkpoint(&out.join("checkpoints").join("final"))?;
    }
    write_summary(&paths.summary, &trainer.summary, cfg.output.median_window)?;
    Ok(trainer.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(algorithm: Algorithm, periods: usize) -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.algorithm = algorithm;
        cfg.periods = periods;
        cfg.scenario.subscribers = [10, 20, 30];
        cfg.agent.batch_size = 4;
        cfg.agent.target_sync = 3;
        cfg
    }

    fn tr(reward: f64) -> Transition {
        let o = LocalObs { prev: vec![vec![0.0; 3]], cur: vec![0.0; 3] };
        Transition { obs: o.clone(), action: 0, reward, next_obs: o, behaviour_prob: 1.0 }
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut r = ReplayBuffer::new(5);
        for i in 0..12 {
            r.push(tr(i as f64));
            assert!(r.len() <= 5);
        }
        let kept: Vec<f64> = r.iter().map(|t| t.reward).collect();
        assert_eq!(kept, vec![7.0, 8.0, 9.0, 10.0, 11.0]);
        let mut rng = stream(1, Domain::Toy, 0);
        let s = r.sample(&mut rng, 3);
        assert_eq!(s.len(), 3);
        assert_eq!(r.sample(&mut rng, 50).len(), 5);
    }

    #[test]
    fn epsilon_schedule_shape() {
        let s = EpsilonSchedule::new(100, 0.2, 0.5, 0.95);
        assert_eq!(s.warmup, 20);
        assert_eq!(s.ramp, 40);
        assert_eq!(s.value(0), 0.0);
        assert_eq!(s.value(19), 0.0);
        assert_eq!(s.value(20), 0.0);
        assert!((s.value(40) - 0.475).abs() < 1e-12);
        assert_eq!(s.value(60), 0.95);
        assert_eq!(s.value(99), 0.95);
        let mut last = 0.0;
        for t in 0..100 {
            assert!(s.value(t) >= last && s.value(t) < 1.0);
            last = s.value(t);
        }
        assert_eq!(EpsilonSchedule::new(3000, 0.2, 0.5, 0.95).warmup, 600);
    }

    #[test]
    fn rolling_median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(rolling_median(&[1.0, 5.0, 2.0, 8.0, 3.0], 3), vec![1.0, 3.0, 2.0, 5.0, 3.0]);
    }

    #[test]
    fn warmup_fills_buffers_without_updates() {
        let mut t = Trainer::new(tiny(Algorithm::Dqn, 20)).unwrap();
        for _ in 0..4 {
            t.step().unwrap();
        }
        for a in t.agents() {
            assert_eq!(a.replay.len(), 4);
            assert_eq!(a.brain.updates(), 0);
        }
        t.step().unwrap();
        assert!(t.agents().iter().all(|a| a.brain.updates() == 1));
    }

    #[test]
    fn target_synced_on_schedule_only() {
        let mut t = Trainer::new(tiny(Algorithm::Dqn, 20)).unwrap();
        for _ in 0..4 {
            t.step().unwrap();
        }
        let initial = t.agents()[0].brain.target.clone().unwrap();
        for k in 1..=3 {
            t.step().unwrap();
            let b = &t.agents()[0].brain;
            if k < 3 {
                assert_eq!(b.target.as_ref().unwrap(), &initial);
                assert_ne!(b.params, initial);
            } else {
                assert_eq!(b.target.as_ref().unwrap(), &b.params);
            }
        }
    }

    #[test]
    fn hard_allocation_is_constant() {
        let mut t = Trainer::new(tiny(Algorithm::Hard, 5)).unwrap();
        for _ in 0..5 {
            for row in t.step().unwrap() {
                assert_eq!((row.c1_units, row.c2_units, row.c3_units), (6, 6, 6));
            }
        }
    }

    #[test]
    fn epsilon_zero_is_uniform() {
        let cfg = tiny(Algorithm::Dqn, 10);
        let env = Env::new(cfg.env.clone(), cfg.scenario.clone(), cfg.traffic.clone(), cfg.radio.clone(), 1).unwrap();
        let bc = cfg.agent.brain_config(Learner::Dqn, false, 3, 136, 0.9);
        let brain = Brain::new(bc, LocalGraph::isolated(0), &mut stream(1, Domain::AgentInit, 0));
        let mut agent = Agent::new(brain, 10, 1, 0);
        let obs = LocalObs { prev: vec![env.observations()[0].prev.to_vec()], cur: env.observations()[0].cur.to_vec() };
        let greedy = agent.brain.greedy(&obs);
        let draws: Vec<usize> = (0..2000).map(|_| agent.act(&obs, 0.0).0).collect();
        assert!(draws.iter().filter(|&&a| a == greedy).count() < 60);
        let follow = (0..2000).filter(|_| agent.act(&obs, 0.999).0 == greedy).count();
        assert!(follow >= 1980, "{follow}");
    }

    #[test]
    fn checkpoint_round_trip_through_trainer() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Trainer::new(tiny(Algorithm::GatA2c, 10)).unwrap();
        for _ in 0..6 {
            a.step().unwrap();
        }
        a.save_checkpoint(dir.path()).unwrap();
        let mut cfg = tiny(Algorithm::GatA2c, 10);
        cfg.output.resume_from = Some(dir.path().to_string_lossy().into_owned());
        let b = Trainer::new(cfg).unwrap();
        for (x, y) in a.agents().iter().zip(b.agents()) {
            assert_eq!(x.brain.params, y.brain.params);
        }
        let mut wrong = tiny(Algorithm::Dqn, 10);
        wrong.output.resume_from = Some(dir.path().to_string_lossy().into_owned());
        assert!(Trainer::new(wrong).is_err());
    }
}
