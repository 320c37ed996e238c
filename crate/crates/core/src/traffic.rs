//! Per-subscriber packet arrivals and per-BS demand vectors.

use crate::error::{config_err, Result};
use crate::rng::{stream, Domain};
use crate::scenario::Subscriber;
use crate::slice::{Slice, NUM_SLICES};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A scalar distribution as written in the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Constant { value: f64 },
    Uniform { min: f64, max: f64 },
    Exponential { mean: f64 },
    /// Pareto with the given tail exponent, truncated at `max`, whose scale
    /// is chosen so that the truncated mean equals `mean`.
    TruncatedPareto { shape: f64, mean: f64, max: f64 },
    /// Uniform choice among a fixed set of values.
    Choice { values: Vec<f64> },
}

impl Dist {
    /// Analytic mean of the configured distribution.
    pub fn mean(&self) -> f64 {
        match self {
            Dist::Constant { value } => *value,
            Dist::Uniform { min, max } => 0.5 * (min + max),
            Dist::Exponential { mean } | Dist::TruncatedPareto { mean, .. } => *mean,
            Dist::Choice { values } => values.iter().sum::<f64>() / values.len() as f64,
        }
    }

    /// Largest value the distribution can produce.
    pub fn upper_bound(&self) -> f64 {
        match self {
            Dist::Constant { value } => *value,
            Dist::Uniform { max, .. } | Dist::TruncatedPareto { max, .. } => *max,
            Dist::Exponential { .. } => f64::INFINITY,
            Dist::Choice { values } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Mean of a Pareto(shape) variable with support `[lower, upper]`.
pub fn truncated_pareto_mean(shape: f64, lower: f64, upper: f64) -> f64 {
    let ratio = lower / upper;
    if (shape - 1.0).abs() < 1e-12 {
        lower * (upper / lower).ln() / (1.0 - ratio)
    } else {
        let norm = 1.0 - ratio.powf(shape);
        shape * lower.powf(shape) * (lower.powf(1.0 - shape) - upper.powf(1.0 - shape)) / ((shape - 1.0) * norm)
    }
}

/// Solves for the lower bound that gives the requested truncated mean.
/// The truncated mean increases monotonically from 0 to `upper` as the
/// lower bound sweeps `(0, upper)`, so bisection converges.
pub fn solve_pareto_lower(shape: f64, mean: f64, upper: f64) -> Result<f64> {
    if !(shape > 0.0 && mean > 0.0 && upper > mean) {
        return Err(config_err(format!(
            "truncated Pareto needs shape > 0 and 0 < mean < max (shape={shape}, mean={mean}, max={upper})"
        )));
    }
    let (mut lo, mut hi) = (upper * 1e-12, mean);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if truncated_pareto_mean(shape, mid, upper) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Compiled sampler; truncated Pareto scales are solved once up front.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Constant(f64),
    Uniform { min: f64, max: f64 },
    Exponential { mean: f64 },
    TruncatedPareto { shape: f64, lower: f64, upper: f64, mass: f64 },
    Choice(Vec<f64>),
}

impl Sampler {
    pub fn new(dist: &Dist) -> Result<Self> {
        Ok(match dist {
            Dist::Constant { value } if *value >= 0.0 => Sampler::Constant(*value),
            Dist::Uniform { min, max } if *min >= 0.0 && max >= min => Sampler::Uniform { min: *min, max: *max },
            Dist::Exponential { mean } if *mean > 0.0 => Sampler::Exponential { mean: *mean },
            Dist::TruncatedPareto { shape, mean, max } => {
                let lower = solve_pareto_lower(*shape, *mean, *max)?;
                Sampler::TruncatedPareto { shape: *shape, lower, upper: *max, mass: 1.0 - (lower / max).powf(*shape) }
            }
            Dist::Choice { values } if !values.is_empty() && values.iter().all(|v| *v >= 0.0) => {
                Sampler::Choice(values.clone())
            }
            other => return Err(config_err(format!("invalid distribution parameters: {other:?}"))),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Uniform { min, max } => min + (max - min) * rng.gen::<f64>(),
            Sampler::Exponential { mean } => -mean * (1.0 - rng.gen::<f64>()).ln(),
            Sampler::TruncatedPareto { shape, lower, upper, mass } => {
                // Inverse CDF of the truncated law.
                let u: f64 = rng.gen();
                (lower / (1.0 - u * mass).powf(1.0 / shape)).min(*upper)
            }
            Sampler::Choice(values) => values[rng.gen_range(0..values.len())],
        }
    }
}

/// Table-driven traffic model of one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceTraffic {
    pub interarrival_ms: Dist,
    pub packet_size_bytes: Dist,
    pub sla_rate_bps: f64,
    pub sla_latency_ms: f64,
}

impl SliceTraffic {
    /// Mean offered load of one subscriber in bits per second.
    pub fn mean_rate_bps(&self) -> f64 {
        8.0 * self.packet_size_bytes.mean() / (self.interarrival_ms.mean() * 1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub volte: SliceTraffic,
    pub embb: SliceTraffic,
    pub urllc: SliceTraffic,
    /// Per-slice demand normalisers in bits. When absent, the expected
    /// offered bits per BS per period are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_normalizer_bits: Option<[f64; NUM_SLICES]>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            volte: SliceTraffic {
                interarrival_ms: Dist::Uniform { min: 0.0, max: 160.0 },
                packet_size_bytes: Dist::Constant { value: 40.0 },
                sla_rate_bps: 51e3,
                sla_latency_ms: 10.0,
            },
            embb: SliceTraffic {
                interarrival_ms: Dist::TruncatedPareto { shape: 1.2, mean: 6.0, max: 12.5 },
                packet_size_bytes: Dist::TruncatedPareto { shape: 1.2, mean: 100.0, max: 250.0 },
                sla_rate_bps: 100e6,
                sla_latency_ms: 10.0,
            },
            urllc: SliceTraffic {
                interarrival_ms: Dist::Exponential { mean: 180.0 },
                packet_size_bytes: Dist::Choice { values: vec![0.3e6, 0.4e6, 0.5e6, 0.6e6, 0.7e6] },
                sla_rate_bps: 10e6,
                sla_latency_ms: 3.0,
            },
            demand_normalizer_bits: None,
        }
    }
}

impl TrafficConfig {
    pub fn slice(&self, s: Slice) -> &SliceTraffic {
        match s {
            Slice::Volte => &self.volte,
            Slice::Embb => &self.embb,
            Slice::Urllc => &self.urllc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in Slice::ALL {
            let t = self.slice(s);
            Sampler::new(&t.interarrival_ms)?;
            Sampler::new(&t.packet_size_bytes)?;
            if !(t.sla_rate_bps >= 0.0 && t.sla_latency_ms > 0.0) {
                return Err(config_err(format!("SLA of {s} must have rate >= 0 and latency > 0")));
            }
        }
        if let Some(n) = self.demand_normalizer_bits {
            if n.iter().any(|v| !(*v > 0.0)) {
                return Err(config_err("traffic.demand_normalizer_bits must be positive"));
            }
        }
        Ok(())
    }

    /// Normalisers that make a BS with its expected share of subscribers
    /// see a demand of about 1 per slice.
    pub fn resolved_normalizers(&self, subscribers: &[usize; NUM_SLICES], num_bs: usize, period_s: f64) -> [f64; NUM_SLICES] {
        if let Some(n) = self.demand_normalizer_bits {
            return n;
        }
        let mut out = [1.0; NUM_SLICES];
        for s in Slice::ALL {
            let per_bs = subscribers[s.index()] as f64 / num_bs.max(1) as f64;
            let bits = self.slice(s).mean_rate_bps() * period_s * per_bs;
            if bits > 0.0 && bits.is_finite() {
                out[s.index()] = bits;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketStatus {
    Pending,
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub owner: usize,
    pub slice: Slice,
    pub size_bits: f64,
    pub arrival: f64,
    pub delivered_bits: f64,
    pub completion: Option<f64>,
    pub status: PacketStatus,
    /// Sum of the per-slot rates over the slots that served this packet.
    pub rate_sum: f64,
    pub served_slots: u32,
}

impl Packet {
    pub fn new(owner: usize, slice: Slice, size_bits: f64, arrival: f64) -> Self {
        Packet {
            owner,
            slice,
            size_bits,
            arrival,
            delivered_bits: 0.0,
            completion: None,
            status: PacketStatus::Pending,
            rate_sum: 0.0,
            served_slots: 0,
        }
    }

    pub fn remaining_bits(&self) -> f64 {
        self.size_bits - self.delivered_bits
    }

    pub fn mean_service_rate(&self) -> f64 {
        if self.served_slots == 0 {
            0.0
        } else {
            self.rate_sum / self.served_slots as f64
        }
    }
}

/// Compiled per-slice samplers.
#[derive(Debug, Clone)]
pub struct TrafficModel {
    interarrival_s: Vec<Sampler>,
    size_bytes: Vec<Sampler>,
}

impl TrafficModel {
    pub fn new(cfg: &TrafficConfig) -> Result<Self> {
        cfg.validate()?;
        let mut interarrival_s = Vec::new();
        let mut size_bytes = Vec::new();
        for s in Slice::ALL {
            let t = cfg.slice(s);
            interarrival_s.push(scale_sampler(Sampler::new(&t.interarrival_ms)?, 1e-3));
            size_bytes.push(Sampler::new(&t.packet_size_bytes)?);
        }
        Ok(TrafficModel { interarrival_s, size_bytes })
    }

    /// Seconds until the next arrival of a subscriber of `slice`.
    pub fn sample_interarrival<R: Rng + ?Sized>(&self, slice: Slice, rng: &mut R) -> f64 {
        self.interarrival_s[slice.index()].sample(rng)
    }

    /// Packet size in bits.
    pub fn sample_packet_size<R: Rng + ?Sized>(&self, slice: Slice, rng: &mut R) -> f64 {
        8.0 * self.size_bytes[slice.index()].sample(rng)
    }
}

fn scale_sampler(s: Sampler, k: f64) -> Sampler {
    match s {
        Sampler::Constant(v) => Sampler::Constant(v * k),
        Sampler::Uniform { min, max } => Sampler::Uniform { min: min * k, max: max * k },
        Sampler::Exponential { mean } => Sampler::Exponential { mean: mean * k },
        Sampler::TruncatedPareto { shape, lower, upper, mass } => {
            Sampler::TruncatedPareto { shape, lower: lower * k, upper: upper * k, mass }
        }
        Sampler::Choice(v) => Sampler::Choice(v.into_iter().map(|x| x * k).collect()),
    }
}

#[derive(Debug, Clone)]
struct ArrivalState {
    rng: ChaCha8Rng,
    next_arrival: f64,
}

/// Continuous arrival processes, one independent stream per subscriber.
/// The residual time to the next arrival carries across period boundaries.
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    model: TrafficModel,
    states: Vec<ArrivalState>,
}

impl TrafficGenerator {
    pub fn new(model: TrafficModel, subs: &[Subscriber], seed: u64) -> Self {
        let states = subs
            .iter()
            .map(|s| {
                let mut rng = stream(seed, Domain::Traffic, s.id as u64);
                let next_arrival = model.sample_interarrival(s.slice, &mut rng);
                ArrivalState { rng, next_arrival }
            })
            .collect();
        TrafficGenerator { model, states }
    }

    pub fn model(&self) -> &TrafficModel {
        &self.model
    }

    /// Packets arriving in `[start, start + len)`, grouped by owner in id
    /// order and sorted by arrival time within each owner.
    pub fn generate_period(&mut self, subs: &[Subscriber], start: f64, len: f64) -> Vec<Packet> {
        let end = start + len;
        let mut out = Vec::new();
        for (s, st) in subs.iter().zip(self.states.iter_mut()) {
            while st.next_arrival < end {
                let size = self.model.sample_packet_size(s.slice, &mut st.rng);
                out.push(Packet::new(s.id, s.slice, size, st.next_arrival));
                st.next_arrival += self.model.sample_interarrival(s.slice, &mut st.rng);
            }
        }
        out
    }

    /// Scheduled time of the next arrival of subscriber `id`.
    pub fn next_arrival(&self, id: usize) -> f64 {
        self.states[id].next_arrival
    }
}

/// Normalised offered load of BS `bs`: bits arrived per slice divided by
/// the per-slice normaliser.
pub fn demand_vector(packets: &[Packet], association: &[usize], bs: usize, normalizers: &[f64; NUM_SLICES]) -> Result<[f64; NUM_SLICES]> {
    if normalizers.iter().any(|n| !(*n > 0.0)) {
        return Err(config_err("demand normalisers must be positive"));
    }
    let mut d = [0.0; NUM_SLICES];
    for p in packets.iter().filter(|p| association[p.owner] == bs) {
        d[p.slice.index()] += p.size_bits;
    }
    for (v, n) in d.iter_mut().zip(normalizers) {
        *v /= n;
    }
    Ok(d)
}

/// Demand vectors of all base stations in one pass.
pub fn demand_vectors(packets: &[Packet], association: &[usize], num_bs: usize, normalizers: &[f64; NUM_SLICES]) -> Vec<[f64; NUM_SLICES]> {
    let mut d = vec![[0.0; NUM_SLICES]; num_bs];
    for p in packets {
        d[association[p.owner]][p.slice.index()] += p.size_bits;
    }
    for row in d.iter_mut() {
        for (v, n) in row.iter_mut().zip(normalizers) {
            *v /= n;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{spawn_subscribers, ScenarioConfig};

    // Composite Simpson integral of x·f(x) for the truncated Pareto density.
    fn quadrature_mean(shape: f64, lower: f64, upper: f64) -> f64 {
        let norm = 1.0 - (lower / upper).powf(shape);
        let pdf = |x: f64| shape * lower.powf(shape) * x.powf(-shape - 1.0) / norm;
        let n = 200_000;
        let h = (upper - lower) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lower + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * x * pdf(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn pareto_lower_bound_matches_quadrature() {
        for (shape, mean, max) in [(1.2, 6.0, 12.5), (1.2, 100.0, 250.0), (2.5, 3.0, 10.0), (1.0, 2.0, 5.0)] {
            let lower = solve_pareto_lower(shape, mean, max).unwrap();
            assert!(lower > 0.0 && lower < mean);
            let q = quadrature_mean(shape, lower, max);
            assert!((q - mean).abs() / mean < 1e-6, "{shape} {mean} {max}: {q}");
        }
        assert!(solve_pareto_lower(1.2, 20.0, 12.5).is_err());
    }

    #[test]
    fn table_sampler_ranges() {
        let m = TrafficModel::new(&TrafficConfig::default()).unwrap();
        let mut rng = stream(3, Domain::Toy, 0);
        for _ in 0..50_000 {
            let v = m.sample_interarrival(Slice::Volte, &mut rng);
            assert!((0.0..=0.160).contains(&v));
            assert!(m.sample_interarrival(Slice::Embb, &mut rng) <= 0.0125);
            assert_eq!(m.sample_packet_size(Slice::Volte, &mut rng), 320.0);
            assert!(m.sample_packet_size(Slice::Embb, &mut rng) <= 2000.0);
            let u = m.sample_packet_size(Slice::Urllc, &mut rng);
            assert!([2.4e6, 3.2e6, 4.0e6, 4.8e6, 5.6e6].contains(&u), "{u}");
        }
    }

    #[test]
    fn urllc_interarrival_mean() {
        let m = TrafficModel::new(&TrafficConfig::default()).unwrap();
        let mut rng = stream(9, Domain::Toy, 1);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| m.sample_interarrival(Slice::Urllc, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.180).abs() / 0.180 < 0.01, "{mean}");
    }

    #[test]
    fn arrivals_per_period_and_carry_over() {
        let cfg = ScenarioConfig { subscribers: [0, 0, 1], ..Default::default() };
        let subs = spawn_subscribers(&cfg, 1);
        let mut gen = TrafficGenerator::new(TrafficModel::new(&TrafficConfig::default()).unwrap(), &subs, 4);
        let periods = 10_000;
        let mut count = 0usize;
        for t in 0..periods {
            let start = t as f64;
            let pk = gen.generate_period(&subs, start, 1.0);
            assert!(pk.iter().all(|p| p.arrival >= start && p.arrival < start + 1.0));
            assert!(gen.next_arrival(0) >= start + 1.0);
            count += pk.len();
        }
        let rate = count as f64 / periods as f64;
        let expect = 1.0 / 0.180;
        assert!((rate - expect).abs() / expect < 0.02, "{rate}");

        let none = TrafficGenerator::new(TrafficModel::new(&TrafficConfig::default()).unwrap(), &[], 4)
            .generate_period(&[], 0.0, 1.0);
        assert!(none.is_empty());
    }

    #[test]
    fn demand_vector_arithmetic() {
        let norm = [1.0, 1.0, 40e6];
        assert_eq!(demand_vector(&[], &[], 0, &norm).unwrap(), [0.0; 3]);
        let p = vec![Packet::new(0, Slice::Urllc, 4.0e6, 0.1)];
        let d = demand_vector(&p, &[0], 0, &norm).unwrap();
        assert!((d[2] - 0.1).abs() < 1e-15);
        let doubled: Vec<Packet> = p.iter().cloned().chain(p.iter().cloned()).collect();
        assert_eq!(demand_vector(&doubled, &[0], 0, &norm).unwrap()[2], 2.0 * d[2]);
        assert!(demand_vector(&p, &[0], 0, &[1.0, 0.0, 1.0]).is_err());
    }
}
