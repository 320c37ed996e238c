//! The multi-agent slicing environment: one agent per BS chooses how many
//! bandwidth units each slice receives for the next period.

use crate::error::{config_err, Error, Result};
use crate::radio::{self, BsPeriodInput, LinkBudget, PeriodMetrics, RadioConfig, Sla};
use crate::scenario::{distance, ScenarioConfig, ScenarioState};
use crate::slice::{Slice, NUM_SLICES};
use crate::traffic::{demand_vectors, Packet, TrafficConfig, TrafficGenerator, TrafficModel};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// `n choose k` for the small arguments used by the action codec.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Number of ways to split `units` into `parts` positive integers.
pub fn action_count(units: usize, parts: usize) -> Result<usize> {
    if parts == 0 || units < parts {
        return Err(config_err(format!("{units} units cannot give {parts} slices at least one unit each")));
    }
    Ok(binomial(units as u64 - 1, parts as u64 - 1) as usize)
}

/// Lexicographic bijection between action indices and compositions of
/// `units` into `parts` positive parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionCodec {
    units: usize,
    parts: usize,
    count: usize,
}

impl ActionCodec {
    pub fn new(units: usize, parts: usize) -> Result<Self> {
        let count = action_count(units, parts)?;
        Ok(ActionCodec { units, parts, count })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn count(&self) -> usize {
        self.count
    }

    // Compositions of `rem` into `k` positive parts.
    fn tail_count(rem: usize, k: usize) -> usize {
        if k == 0 {
            return usize::from(rem == 0);
        }
        if rem < k {
            return 0;
        }
        binomial(rem as u64 - 1, k as u64 - 1) as usize
    }

    pub fn decode(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.count {
            return Err(Error::Action(format!("action index {index} out of range 0..{}", self.count)));
        }
        let mut out = Vec::with_capacity(self.parts);
        let mut rem = self.units;
        let mut idx = index;
        for i in 0..self.parts {
            let k = self.parts - i - 1;
            if k == 0 {
                out.push(rem);
                break;
            }
            let mut c = 1;
            loop {
                let block = Self::tail_count(rem - c, k);
                if idx < block {
                    break;
                }
                idx -= block;
                c += 1;
            }
            out.push(c);
            rem -= c;
        }
        Ok(out)
    }

    pub fn encode(&self, units: &[usize]) -> Result<usize> {
        if units.len() != self.parts || units.contains(&0) || units.iter().sum::<usize>() != self.units {
            return Err(Error::Action(format!("{units:?} is not a split of {} units into {} positive parts", self.units, self.parts)));
        }
        let mut idx = 0;
        let mut rem = self.units;
        for (i, &c) in units.iter().enumerate().take(self.parts - 1) {
            let k = self.parts - i - 1;
            for smaller in 1..c {
                idx += Self::tail_count(rem - smaller, k);
            }
            rem -= c;
        }
        Ok(idx)
    }

    /// Three-slice decode, the shape the environment works with.
    pub fn decode3(&self, index: usize) -> Result<[usize; NUM_SLICES]> {
        let v = self.decode(index)?;
        v.try_into().map_err(|_| Error::Action("codec is not three-slice".into()))
    }
}

/// Equal split with leftover units going to the lowest slice indices.
pub fn hard_units(units: usize) -> [usize; NUM_SLICES] {
    let base = units / NUM_SLICES;
    let extra = units % NUM_SLICES;
    std::array::from_fn(|i| base + usize::from(i < extra))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub bandwidth_mhz: f64,
    pub delta_mhz: f64,
    pub alpha: f64,
    pub beta: [f64; NUM_SLICES],
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gamma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { bandwidth_mhz: 10.0, delta_mhz: 0.54, alpha: 0.01, beta: [1.0; NUM_SLICES], c1: 6.0, c2: 2.0, c3: 0.9, gamma: 0.9 }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_mhz > 0.0 && self.delta_mhz > 0.0) {
            return Err(config_err("env: bandwidth and delta must be positive"));
        }
        if !(self.alpha > 0.0) || self.beta.iter().any(|b| !(*b >= 0.0)) {
            return Err(config_err("env: alpha must be > 0 and every beta >= 0"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) || !(self.c3 > 0.0 && self.c3 <= 1.0) {
            return Err(config_err("env: c1, c2 must be > 0 and c3 in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err("env: gamma must be in (0, 1]"));
        }
        action_count(self.units(), NUM_SLICES)?;
        Ok(())
    }

    /// Whole bandwidth units that fit in the band; the rest is guard band.
    pub fn units(&self) -> usize {
        ((self.bandwidth_mhz / self.delta_mhz) + 1e-9).floor() as usize
    }

    pub fn weights(&self) -> UtilityWeights {
        UtilityWeights { alpha: self.alpha, beta: self.beta, c1: self.c1, c2: self.c2, c3: self.c3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityWeights {
    pub alpha: f64,
    pub beta: [f64; NUM_SLICES],
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// `α·SE + Σ β_n·SSR_n`.
pub fn utility(se: f64, ssr: &[f64; NUM_SLICES], w: &UtilityWeights) -> f64 {
    w.alpha * se + ssr.iter().zip(&w.beta).map(|(s, b)| s * b).sum::<f64>()
}

/// Reward in [0, 1]; the flag reports whether clipping was needed.
pub fn reward(utility: f64, mean_ssr: f64, w: &UtilityWeights) -> (f64, bool) {
    let raw = if mean_ssr >= w.c3 { utility / w.c1 } else { mean_ssr / w.c2 };
    let r = raw.clamp(0.0, 1.0);
    (r, r != raw)
}

/// Demand seen by one agent: the previous and the current period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub prev: [f64; NUM_SLICES],
    pub cur: [f64; NUM_SLICES],
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub utilities: Vec<f64>,
    pub metrics: Vec<PeriodMetrics>,
    /// Subscribers handed over into each BS when the period closed.
    pub handovers: Vec<usize>,
    /// Index of the period that was just simulated.
    pub period: u64,
}

/// Packet accounting used by conservation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PacketLedger {
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    weights: UtilityWeights,
    scenario_cfg: ScenarioConfig,
    traffic_cfg: TrafficConfig,
    radio_cfg: RadioConfig,
    budget: LinkBudget,
    sla: [Sla; NUM_SLICES],
    codec: ActionCodec,
    normalizers: [f64; NUM_SLICES],
    seed: u64,
    scenario: ScenarioState,
    traffic: TrafficGenerator,
    queues: Vec<VecDeque<Packet>>,
    rr_last: Vec<[Option<usize>; NUM_SLICES]>,
    period: u64,
    demand_prev: Vec<[f64; NUM_SLICES]>,
    demand_cur: Vec<[f64; NUM_SLICES]>,
    clip_count: u64,
    ledger: PacketLedger,
}

impl Env {
    pub fn new(cfg: EnvConfig, scenario_cfg: ScenarioConfig, traffic_cfg: TrafficConfig, radio_cfg: RadioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        traffic_cfg.validate()?;
        radio_cfg.validate()?;
        let codec = ActionCodec::new(cfg.units(), NUM_SLICES)?;
        let scenario = ScenarioState::new(&scenario_cfg, seed)?;
        let model = TrafficModel::new(&traffic_cfg)?;
        let traffic = TrafficGenerator::new(model, &scenario.subscribers, seed);
        let sla = Slice::ALL.map(|s| {
            let t = traffic_cfg.slice(s);
            Sla { rate_bps: t.sla_rate_bps, latency_s: t.sla_latency_ms * 1e-3 }
        });
        let normalizers = traffic_cfg.resolved_normalizers(&scenario_cfg.subscribers, scenario.num_bs(), radio_cfg.period_s());
        let num_bs = scenario.num_bs();
        let num_subs = scenario.subscribers.len();
        let mut env = Env {
            weights: cfg.weights(),
            cfg,
            scenario_cfg,
            traffic_cfg,
            budget: radio_cfg.link_budget(),
            radio_cfg,
            sla,
            codec,
            normalizers,
            seed,
            scenario,
            traffic,
            queues: vec![VecDeque::new(); num_subs],
            rr_last: vec![[None; NUM_SLICES]; num_bs],
            period: 0,
            demand_prev: vec![[0.0; NUM_SLICES]; num_bs],
            demand_cur: vec![[0.0; NUM_SLICES]; num_bs],
            clip_count: 0,
            ledger: PacketLedger::default(),
        };
        env.admit_period_arrivals();
        Ok(env)
    }

    /// Rebuilds the scenario and every random stream from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>> {
        *self = Env::new(self.cfg.clone(), self.scenario_cfg.clone(), self.traffic_cfg.clone(), self.radio_cfg.clone(), seed)?;
        Ok(self.observations())
    }

    fn admit_period_arrivals(&mut self) {
        let start = self.period as f64 * self.radio_cfg.period_s();
        let arrivals = self.traffic.generate_period(&self.scenario.subscribers, start, self.radio_cfg.period_s());
        self.demand_prev = std::mem::take(&mut self.demand_cur);
        self.demand_cur = demand_vectors(&arrivals, &self.scenario.association, self.num_bs(), &self.normalizers);
        self.ledger.arrived += arrivals.len() as u64;
        for p in arrivals {
            self.queues[p.owner].push_back(p);
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.demand_prev.iter().zip(&self.demand_cur).map(|(p, c)| Observation { prev: *p, cur: *c }).collect()
    }

    pub fn num_bs(&self) -> usize {
        self.scenario.num_bs()
    }

    pub fn codec(&self) -> &ActionCodec {
        &self.codec
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &UtilityWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: UtilityWeights) {
        self.weights = weights;
    }

    pub fn scenario(&self) -> &ScenarioState {
        &self.scenario
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clip_count(&self) -> u64 {
        self.clip_count
    }

    pub fn normalizers(&self) -> [f64; NUM_SLICES] {
        self.normalizers
    }

    pub fn packet_ledger(&self) -> PacketLedger {
        self.ledger
    }

    /// Packets still waiting in subscriber queues.
    pub fn pending_packets(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }

    /// The equal-split action index.
    pub fn hard_action(&self) -> usize {
        self.codec.encode(&hard_units(self.codec.units())).expect("equal split is always a valid action")
    }

    fn mean_gains(&self) -> Vec<f64> {
        self.scenario
            .subscribers
            .iter()
            .zip(&self.scenario.association)
            .map(|(s, &m)| {
                let d = distance(s.position, self.scenario.base_stations[m].position);
                self.budget.path_gain(d) * radio::shadowing_factor(self.seed, self.radio_cfg.shadowing_sigma_db, s.id, m)
            })
            .collect()
    }

    fn users_by_slice(&self) -> Vec<[Vec<usize>; NUM_SLICES]> {
        let mut out: Vec<[Vec<usize>; NUM_SLICES]> = vec![Default::default(); self.num_bs()];
        for (u, &m) in self.scenario.association.iter().enumerate() {
            out[m][self.scenario.subscribers[u].slice.index()].push(u);
        }
        out
    }

    fn bs_input<'a>(&self, users: &'a [Vec<usize>; NUM_SLICES], gains: &'a [f64], units: [usize; NUM_SLICES], trace: bool) -> BsPeriodInput<'a> {
        let delta_hz = self.cfg.delta_mhz * 1e6;
        BsPeriodInput {
            users: [&users[0], &users[1], &users[2]],
            mean_gain: gains,
            allocation_hz: units.map(|c| c as f64 * delta_hz),
            total_bandwidth_hz: self.cfg.bandwidth_mhz * 1e6,
            sla: self.sla,
            budget: self.budget,
            period_index: self.period,
            start_time: self.period as f64 * self.radio_cfg.period_s(),
            slot_s: self.radio_cfg.slot_s(),
            slots: self.radio_cfg.slots_per_period,
            fading_seed: self.seed,
            trace,
        }
    }

    /// Metrics and utility BS `bs` would obtain this period under `action`,
    /// without advancing the environment.
    pub fn preview_bs(&self, bs: usize, action: usize) -> Result<(PeriodMetrics, f64)> {
        let units = self.codec.decode3(action)?;
        let users = self.users_by_slice();
        let gains = self.mean_gains();
        let mut queues = self.queues.clone();
        let mut rr = self.rr_last[bs];
        let out = radio::run_period(&self.bs_input(&users[bs], &gains, units, false), &mut queues, &mut rr);
        let j = utility(out.metrics.se, &out.metrics.ssr, &self.weights);
        Ok((out.metrics, j))
    }

    /// Serves one period with one action per BS, then moves subscribers and
    /// admits the next period's arrivals.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if actions.len() != self.num_bs() {
            return Err(Error::Action(format!("expected {} actions, got {}", self.num_bs(), actions.len())));
        }
        let units: Vec<[usize; NUM_SLICES]> = actions.iter().map(|&a| self.codec.decode3(a)).collect::<Result<_>>()?;
        let users = self.users_by_slice();
        let gains = self.mean_gains();
        let mut metrics = Vec::with_capacity(self.num_bs());
        let mut utilities = Vec::with_capacity(self.num_bs());
        let mut rewards = Vec::with_capacity(self.num_bs());
        for bs in 0..self.num_bs() {
            let input = self.bs_input(&users[bs], &gains, units[bs], false);
            let mut rr = self.rr_last[bs];
            let out = radio::run_period(&input, &mut self.queues, &mut rr);
            self.rr_last[bs] = rr;
            let m = out.metrics;
            for n in 0..NUM_SLICES {
                self.ledger.delivered += m.delivered[n] as u64;
                self.ledger.dropped += m.dropped[n] as u64;
            }
            let j = utility(m.se, &m.ssr, &self.weights);
            let (r, clipped) = reward(j, m.mean_ssr(), &self.weights);
            self.clip_count += u64::from(clipped);
            metrics.push(m);
            utilities.push(j);
            rewards.push(r);
        }
        let period = self.period;
        let handovers = self.scenario.step(self.radio_cfg.period_s());
        self.period += 1;
        self.admit_period_arrivals();
        Ok(StepOutcome { observations: self.observations(), rewards, utilities, metrics, handovers, period })
    }
}
