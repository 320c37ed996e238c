//! Samples the per-slice inter-arrival and packet-size distributions,
//! compares empirical and configured means, then generates one period of
//! arrivals for the desk scenario and prints each BS's demand vector.

use slicenet::config::RunConfig;
use slicenet::rng::{stream, Domain};
use slicenet::scenario::ScenarioState;
use slicenet::slice::Slice;
use slicenet::traffic::{demand_vectors, Sampler, TrafficGenerator, TrafficModel};

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::desk();
    let n = 200_000;
    println!("{:<7} {:<14} {:>12} {:>12} {:>12}", "slice", "quantity", "configured", "empirical", "max seen");
    for (i, s) in Slice::ALL.into_iter().enumerate() {
        let t = cfg.traffic.slice(s);
        for (j, (what, dist)) in [("gap (ms)", &t.interarrival_ms), ("size (bytes)", &t.packet_size_bytes)].into_iter().enumerate() {
            let sampler = Sampler::new(dist)?;
            let mut rng = stream(7, Domain::Traffic, (2 * i + j) as u64);
            let xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let max = xs.iter().copied().fold(0.0, f64::max);
            println!("{:<7} {:<14} {:>12.3} {:>12.3} {:>12.3}", s.name(), what, dist.mean(), mean, max);
        }
        println!("{:<7} offered load per subscriber {:.3} Mbit/s", "", t.mean_rate_bps() / 1e6);
    }

    let scenario = ScenarioState::new(&cfg.scenario, 1)?;
    let mut generator = TrafficGenerator::new(TrafficModel::new(&cfg.traffic)?, &scenario.subscribers, 1);
    let period = cfg.radio.period_s();
    let packets = generator.generate_period(&scenario.subscribers, 0.0, period);
    let norm = cfg.traffic.resolved_normalizers(&cfg.scenario.subscribers, scenario.num_bs(), period);
    println!("\n{} packets in the first period; demand normalisers (bits) [{:.3e}, {:.3e}, {:.3e}]", packets.len(), norm[0], norm[1], norm[2]);
    for (m, d) in demand_vectors(&packets, &scenario.association, scenario.num_bs(), &norm).iter().enumerate() {
        println!("  BS {m}: demand [volte {:.3}, embb {:.3}, urllc {:.3}]", d[0], d[1], d[2]);
    }
    Ok(())
}
