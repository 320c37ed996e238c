//! Link budget at a few distances, then one scheduling period of a single
//! BS under two different bandwidth splits.

use slicenet::config::RunConfig;
use slicenet::env::Env;
use slicenet::radio::user_rate;

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::desk();
    let budget = cfg.radio.link_budget();
    let w = cfg.env.bandwidth_mhz * 1e6 / 3.0;
    println!("link budget, w = {:.2} MHz (one third of the band):", w / 1e6);
    for d in [3.0, 10.0, 25.0, 50.0, 100.0] {
        let snr = budget.snr(budget.path_gain(d), w);
        println!("  {d:>5.0} m: path loss {:>6.1} dB, SNR {:>6.1} dB, rate {:>7.1} Mbit/s", budget.pathloss_db(d), 10.0 * snr.log10(), user_rate(w, snr) / 1e6);
    }

    // Load the queues for a few periods, then compare splits on the same snapshot.
    let mut env = Env::new(cfg.env.clone(), cfg.scenario.clone(), cfg.traffic.clone(), cfg.radio.clone(), 3)?;
    for _ in 0..5 {
        let hard = vec![env.hard_action(); env.num_bs()];
        env.step(&hard)?;
    }
    let codec = *env.codec();
    let users = env.scenario().users_per_bs();
    let bs = (0..env.num_bs()).max_by_key(|&m| users[m].len()).expect("at least one BS");
    println!("BS {bs} serves {} subscribers", users[bs].len());
    for units in [[6, 6, 6], [2, 13, 3], [1, 1, 16]] {
        let (m, j) = env.preview_bs(bs, codec.encode(&units)?)?;
        println!(
            "BS {bs} split {units:?} ({:.2}/{:.2}/{:.2} MHz): SE {:.1}, SSR [{:.3}, {:.3}, {:.3}], delivered {:?}, dropped {:?}, utility {j:.3}",
            units[0] as f64 * cfg.env.delta_mhz,
            units[1] as f64 * cfg.env.delta_mhz,
            units[2] as f64 * cfg.env.delta_mhz,
            m.se,
            m.ssr[0],
            m.ssr[1],
            m.ssr[2],
            m.delivered,
            m.dropped
        );
    }
    Ok(())
}
