//! Link model, per-slot round-robin scheduling within each slice, and the
//! period-level spectral efficiency and SLA satisfaction ratio.

use crate::error::{config_err, Result};
use crate::rng::{hashed_unit, Domain};
use crate::slice::{Slice, NUM_SLICES};
use crate::traffic::{Packet, PacketStatus};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    /// Log-distance path loss: `intercept + slope·log10(d / 1 m)` in dB.
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    /// Distances below this are clamped.
    pub min_distance_m: f64,
    pub rayleigh: bool,
    /// Log-normal shadowing standard deviation; 0 disables it.
    pub shadowing_sigma_db: f64,
    pub slot_ms: f64,
    pub slots_per_period: usize,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            tx_power_dbm: 30.0,
            noise_psd_dbm_hz: -174.0,
            pathloss_intercept_db: 38.0,
            pathloss_slope_db: 30.0,
            min_distance_m: 3.0,
            rayleigh: true,
            shadowing_sigma_db: 0.0,
            slot_ms: 0.5,
            slots_per_period: 2000,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_psd_dbm_hz < 0.0) || !self.tx_power_dbm.is_finite() {
            return Err(config_err("radio: noise PSD must be negative dBm/Hz and power finite"));
        }
        if !(self.min_distance_m > 0.0 && self.slot_ms > 0.0 && self.slots_per_period > 0) {
            return Err(config_err("radio: min distance, slot length and slot count must be positive"));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(config_err("radio: shadowing sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn slot_s(&self) -> f64 {
        self.slot_ms * 1e-3
    }

    pub fn period_s(&self) -> f64 {
        self.slot_s() * self.slots_per_period as f64
    }

    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget {
            tx_power_mw: 10f64.powf(self.tx_power_dbm / 10.0),
            noise_mw_per_hz: 10f64.powf(self.noise_psd_dbm_hz / 10.0),
            intercept_db: self.pathloss_intercept_db,
            slope_db: self.pathloss_slope_db,
            min_distance_m: self.min_distance_m,
            rayleigh: self.rayleigh,
            shadowing_sigma_db: self.shadowing_sigma_db,
        }
    }
}

/// Linear-scale link budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_mw: f64,
    pub noise_mw_per_hz: f64,
    pub intercept_db: f64,
    pub slope_db: f64,
    pub min_distance_m: f64,
    pub rayleigh: bool,
    pub shadowing_sigma_db: f64,
}

impl LinkBudget {
    pub fn pathloss_db(&self, d: f64) -> f64 {
        self.intercept_db + self.slope_db * d.max(self.min_distance_m).log10()
    }

    /// Deterministic path gain `PL(d)^-1` (linear).
    pub fn path_gain(&self, d: f64) -> f64 {
        10f64.powf(-self.pathloss_db(d) / 10.0)
    }

    /// Path gain with a fading power factor applied (`fading` = 1 when off).
    pub fn channel_gain(&self, path_gain: f64, fading: f64) -> f64 {
        if self.rayleigh {
            path_gain * fading
        } else {
            path_gain
        }
    }

    /// Downlink SNR `g·P / (N0·w)`.
    #[inline]
    pub fn snr(&self, gain: f64, w_hz: f64) -> f64 {
        debug_assert!(w_hz > 0.0, "snr needs a positive bandwidth");
        gain * self.tx_power_mw / (self.noise_mw_per_hz * w_hz)
    }
}

/// Shannon rate `w·log2(1 + snr)` in bits/s.
#[inline]
pub fn user_rate(w_hz: f64, snr: f64) -> f64 {
    w_hz * (1.0 + snr).log2()
}

/// Rayleigh power fading factor (Exp(1)) of one subscriber in one slot.
/// It is a pure function of its coordinates, so the realised channel does
/// not depend on which allocation is being simulated.
#[inline]
pub fn fading_factor(seed: u64, period: u64, subscriber: usize, slot: usize) -> f64 {
    -hashed_unit(seed, Domain::Fading, &[period, subscriber as u64, slot as u64]).ln()
}

/// Static log-normal shadowing factor between a subscriber and a BS.
pub fn shadowing_factor(seed: u64, sigma_db: f64, subscriber: usize, bs: usize) -> f64 {
    if sigma_db == 0.0 {
        return 1.0;
    }
    let u1 = hashed_unit(seed, Domain::Shadowing, &[subscriber as u64, bs as u64, 0]);
    let u2 = hashed_unit(seed, Domain::Shadowing, &[subscriber as u64, bs as u64, 1]);
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    10f64.powf(sigma_db * z / 10.0)
}

/// Service-level agreement of one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sla {
    pub rate_bps: f64,
    pub latency_s: f64,
}

/// Per-BS outcome of one scheduling period.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub se: f64,
    pub ssr: [f64; NUM_SLICES],
    pub delivered: [usize; NUM_SLICES],
    pub dropped: [usize; NUM_SLICES],
    pub satisfied: [usize; NUM_SLICES],
}

impl PeriodMetrics {
    pub fn mean_ssr(&self) -> f64 {
        self.ssr.iter().sum::<f64>() / NUM_SLICES as f64
    }

    pub fn resolved(&self, s: Slice) -> usize {
        self.delivered[s.index()] + self.dropped[s.index()]
    }
}

/// One served (slot, slice, subscriber) triple, recorded when tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServedSlot {
    pub slot: usize,
    pub slice: Slice,
    pub subscriber: usize,
}

/// Everything `run_period` needs to know about one BS for one period.
#[derive(Debug, Clone)]
pub struct BsPeriodInput<'a> {
    /// Attached subscriber ids per slice, ascending.
    pub users: [&'a [usize]; NUM_SLICES],
    /// Period-average channel gain of each subscriber (indexed by id).
    pub mean_gain: &'a [f64],
    pub allocation_hz: [f64; NUM_SLICES],
    pub total_bandwidth_hz: f64,
    pub sla: [Sla; NUM_SLICES],
    pub budget: LinkBudget,
    pub period_index: u64,
    pub start_time: f64,
    pub slot_s: f64,
    pub slots: usize,
    pub fading_seed: u64,
    pub trace: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BsPeriodOutcome {
    pub metrics: PeriodMetrics,
    /// Packets that reached a final state during this period.
    pub resolved: Vec<Packet>,
    pub trace: Vec<ServedSlot>,
}

/// Whether a resolved packet met both its latency and its rate SLA.
pub fn packet_satisfied(p: &Packet, sla: Sla) -> bool {
    match (p.status, p.completion) {
        (PacketStatus::Delivered, Some(done)) => {
            done - p.arrival <= sla.latency_s + TIME_EPS && p.mean_service_rate() >= sla.rate_bps * (1.0 - 1e-12)
        }
        _ => false,
    }
}

/// Fraction of resolved packets meeting the SLA; 1 when there are none.
pub fn slice_ssr(packets: &[Packet], sla: Sla) -> f64 {
    let resolved: Vec<&Packet> = packets.iter().filter(|p| p.status != PacketStatus::Pending).collect();
    if resolved.is_empty() {
        return 1.0;
    }
    resolved.iter().filter(|p| packet_satisfied(p, sla)).count() as f64 / resolved.len() as f64
}

/// `Σ_u r_u / W` using each user's period-average gain.
pub fn spectral_efficiency(
    users: [&[usize]; NUM_SLICES],
    mean_gain: &[f64],
    allocation_hz: [f64; NUM_SLICES],
    total_bandwidth_hz: f64,
    budget: &LinkBudget,
) -> f64 {
    let mut sum = 0.0;
    for (n, list) in users.iter().enumerate() {
        let w = allocation_hz[n];
        if w <= 0.0 {
            continue;
        }
        for &u in list.iter() {
            sum += user_rate(w, budget.snr(mean_gain[u], w));
        }
    }
    sum / total_bandwidth_hz
}

fn expire_head(queue: &mut VecDeque<Packet>, now: f64, latency: f64, resolved: &mut Vec<Packet>) {
    while let Some(head) = queue.front() {
        if now - head.arrival > latency + TIME_EPS {
            let mut p = queue.pop_front().unwrap();
            p.status = PacketStatus::Dropped;
            resolved.push(p);
        } else {
            break;
        }
    }
}

/// Simulates one period of one BS. `queues` is indexed by subscriber id and
/// must already hold this period's arrivals behind any carried-over packets.
/// `rr_last` remembers, per slice, the subscriber served most recently so
/// the cyclic order continues across periods.
pub fn run_period(input: &BsPeriodInput<'_>, queues: &mut [VecDeque<Packet>], rr_last: &mut [Option<usize>; NUM_SLICES]) -> BsPeriodOutcome {
    let mut out = BsPeriodOutcome::default();
    let end_time = input.start_time + input.slot_s * input.slots as f64;

    for slice in Slice::ALL {
        let n = slice.index();
        let users = input.users[n];
        let w = input.allocation_hz[n];
        let sla = input.sla[n];
        if users.is_empty() {
            continue;
        }
        if w > 0.0 {
            let mut ptr = match rr_last[n] {
                Some(last) => users.partition_point(|&u| u <= last) % users.len(),
                None => 0,
            };
            for slot in 0..input.slots {
                let now = input.start_time + slot as f64 * input.slot_s;
                let slot_end = now + input.slot_s;
                let mut chosen = None;
                for k in 0..users.len() {
                    let i = (ptr + k) % users.len();
                    let q = &mut queues[users[i]];
                    expire_head(q, now, sla.latency_s, &mut out.resolved);
                    if q.front().is_some_and(|p| p.arrival <= now + TIME_EPS) {
                        chosen = Some(i);
                        break;
                    }
                }
                let Some(i) = chosen else { continue };
                let u = users[i];
                ptr = (i + 1) % users.len();
                rr_last[n] = Some(u);
                if input.trace {
                    out.trace.push(ServedSlot { slot, slice, subscriber: u });
                }
                let fading = if input.budget.rayleigh {
                    fading_factor(input.fading_seed, input.period_index, u, slot)
                } else {
                    1.0
                };
                let gain = input.budget.channel_gain(input.mean_gain[u], fading);
                let rate = user_rate(w, input.budget.snr(gain, w));
                let mut capacity = rate * input.slot_s;
                let q = &mut queues[u];
                while capacity > 0.0 {
                    let Some(p) = q.front_mut() else { break };
                    if p.arrival > now + TIME_EPS {
                        break;
                    }
                    let take = capacity.min(p.remaining_bits());
                    p.delivered_bits += take;
                    p.rate_sum += rate;
                    p.served_slots += 1;
                    capacity -= take;
                    if p.remaining_bits() <= 1e-9 * p.size_bits.max(1.0) {
                        let mut p = q.pop_front().unwrap();
                        p.delivered_bits = p.size_bits;
                        p.completion = Some(slot_end);
                        p.status = PacketStatus::Delivered;
                        out.resolved.push(p);
                    } else {
                        break;
                    }
                }
            }
        }
        // Anything that can no longer meet its deadline is dropped now.
        for &u in users {
            expire_head(&mut queues[u], end_time, sla.latency_s, &mut out.resolved);
        }
    }

    let mut m = PeriodMetrics::default();
    let mut resolved_count = [0usize; NUM_SLICES];
    for p in &out.resolved {
        let n = p.slice.index();
        resolved_count[n] += 1;
        match p.status {
            PacketStatus::Delivered => m.delivered[n] += 1,
            PacketStatus::Dropped => m.dropped[n] += 1,
            PacketStatus::Pending => unreachable!("resolved packets are never pending"),
        }
        if packet_satisfied(p, input.sla[n]) {
            m.satisfied[n] += 1;
        }
    }
    for n in 0..NUM_SLICES {
        m.ssr[n] = if resolved_count[n] == 0 { 1.0 } else { m.satisfied[n] as f64 / resolved_count[n] as f64 };
    }
    m.se = spectral_efficiency(input.users, input.mean_gain, input.allocation_hz, input.total_bandwidth_hz, &input.budget);
    out.metrics = m;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(rayleigh: bool) -> LinkBudget {
        RadioConfig { rayleigh, ..Default::default() }.link_budget()
    }

    fn sla_all(rate: f64, latency: f64) -> [Sla; 3] {
        [Sla { rate_bps: rate, latency_s: latency }; 3]
    }

    fn input<'a>(users: [&'a [usize]; 3], gains: &'a [f64], alloc: [f64; 3], sla: [Sla; 3], slots: usize) -> BsPeriodInput<'a> {
        BsPeriodInput {
            users,
            mean_gain: gains,
            allocation_hz: alloc,
            total_bandwidth_hz: 10e6,
            sla,
            budget: budget(false),
            period_index: 0,
            start_time: 0.0,
            slot_s: 5e-4,
            slots,
            fading_seed: 1,
            trace: true,
        }
    }

    #[test]
    fn gain_cases() {
        let b = budget(false);
        assert_eq!(b.channel_gain(b.path_gain(1.0), 0.3), b.path_gain(1.0));
        assert_eq!(b.path_gain(1.0), b.path_gain(3.0));
        assert!((b.pathloss_db(10.0) - 68.0).abs() < 1e-12);
        let r = budget(true);
        let pg = r.path_gain(20.0);
        let n = 100_000;
        let mean = (0..n).map(|s| r.channel_gain(pg, fading_factor(5, 0, 3, s))).sum::<f64>() / n as f64;
        assert!((mean / pg - 1.0).abs() < 0.01);
    }

    #[test]
    fn snr_and_rate_identities() {
        let b = budget(false);
        let w = 1e6;
        let gain = b.noise_mw_per_hz * w / b.tx_power_mw;
        assert!((b.snr(gain, w) - 1.0).abs() < 1e-12);
        assert!((b.snr(gain, 2.0 * w) - 0.5).abs() < 1e-12);
        assert_eq!(user_rate(1.0, 1.0), 1.0);
        assert_eq!(user_rate(2.0, 3.0), 4.0);
        // Rate grows with bandwidth despite the SNR dilution.
        let g = b.path_gain(40.0);
        for w in [0.18e6, 0.54e6, 3.24e6, 9.72e6] {
            let h = w * 1e-6;
            let dr = (user_rate(w + h, b.snr(g, w + h)) - user_rate(w - h, b.snr(g, w - h))) / (2.0 * h);
            assert!(dr > 0.0);
        }
    }

    #[test]
    fn default_budget_scale() {
        // Independent dB arithmetic: 30 dBm - (38 + 30 log10 50) dB against
        // -174 dBm/Hz over a third of 10 MHz.
        let b = budget(false);
        let w: f64 = 10e6 / 3.0;
        let snr_db = 30.0 - (38.0 + 30.0 * 50f64.log10()) - (-174.0 + 10.0 * w.log10());
        let expect = (1.0 + 10f64.powf(snr_db / 10.0)).log2();
        let got = (1.0 + b.snr(b.path_gain(50.0), w)).log2();
        assert!((got - expect).abs() < 1e-9);
        assert!((16.0..17.0).contains(&got), "{got}");
    }

    #[test]
    fn spectral_efficiency_cases() {
        let b = budget(false);
        assert_eq!(spectral_efficiency([&[], &[], &[]], &[], [1e6; 3], 10e6, &b), 0.0);
        // A gain chosen so that log2(1+SNR) = 5 at a third of the band.
        let w = 10e6 / 3.0;
        let g = 31.0 * b.noise_mw_per_hz * w / b.tx_power_mw;
        let gains = vec![g; 100];
        let ids: Vec<usize> = (0..100).collect();
        let (a, rest) = ids.split_at(33);
        let (bb, c) = rest.split_at(33);
        let se = spectral_efficiency([a, bb, c], &gains, [w; 3], 10e6, &b);
        assert!((se - 100.0 * 5.0 / 3.0).abs() < 1e-9, "{se}");
        // One user with r = W.
        let g1 = b.noise_mw_per_hz * 10e6 / b.tx_power_mw;
        assert!((spectral_efficiency([&[0], &[], &[]], &[g1], [10e6, 0.0, 0.0], 10e6, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssr_conventions() {
        let sla = Sla { rate_bps: 1.0, latency_s: 0.01 };
        assert_eq!(slice_ssr(&[], sla), 1.0);
        let mut ok = Packet::new(0, Slice::Volte, 10.0, 0.0);
        ok.status = PacketStatus::Delivered;
        ok.completion = Some(0.0005);
        ok.rate_sum = 100.0;
        ok.served_slots = 1;
        let mut bad = ok.clone();
        bad.status = PacketStatus::Dropped;
        bad.completion = None;
        assert_eq!(slice_ssr(&[ok.clone(), ok.clone(), ok.clone()], sla), 1.0);
        assert_eq!(slice_ssr(&[ok.clone(), ok.clone(), ok, bad], sla), 0.75);
    }

    #[test]
    fn single_packet_finishes_in_one_slot() {
        let gains = vec![budget(false).path_gain(10.0)];
        let mut queues = vec![VecDeque::from(vec![Packet::new(0, Slice::Volte, 320.0, 0.0)])];
        let inp = input([&[0], &[], &[]], &gains, [1e6, 1e6, 1e6], sla_all(51e3, 0.01), 10);
        let out = run_period(&inp, &mut queues, &mut [None; 3]);
        assert_eq!(out.resolved.len(), 1);
        let p = &out.resolved[0];
        assert_eq!(p.status, PacketStatus::Delivered);
        assert!((p.completion.unwrap() - p.arrival - 5e-4).abs() < 1e-12);
        assert_eq!(out.metrics.ssr[0], 1.0);
    }

    #[test]
    fn urllc_packet_past_deadline_is_dropped() {
        let gains = vec![budget(false).path_gain(10.0)];
        let mut queues = vec![VecDeque::from(vec![Packet::new(0, Slice::Urllc, 4.0e6, 0.0)])];
        let sla = [Sla { rate_bps: 10e6, latency_s: 3e-3 }; 3];
        let inp = input([&[], &[], &[0]], &gains, [1e6, 1e6, 1e6], sla, 20);
        let out = run_period(&inp, &mut queues, &mut [None; 3]);
        assert_eq!(out.metrics.dropped[2], 1);
        assert_eq!(out.metrics.ssr[2], 0.0);
        assert!(queues[0].is_empty());
    }

    #[test]
    fn round_robin_alternates() {
        let gains = vec![budget(false).path_gain(30.0); 2];
        // Both users hold more data than a slot can carry.
        let mut queues: Vec<VecDeque<Packet>> =
            (0..2).map(|u| VecDeque::from(vec![Packet::new(u, Slice::Embb, 1e9, 0.0)])).collect();
        let inp = input([&[], &[0, 1], &[]], &gains, [1e6, 1e6, 1e6], sla_all(1.0, 10.0), 12);
        let out = run_period(&inp, &mut queues, &mut [None; 3]);
        let seq: Vec<usize> = out.trace.iter().map(|s| s.subscriber).collect();
        assert_eq!(seq, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    }
}
