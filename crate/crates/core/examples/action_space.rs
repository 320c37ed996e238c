//! Action-space sizes for both granularities, the codec's ordering, and an
//! exhaustive ranking of all coarse actions for one BS on a frozen period.

use slicenet::config::RunConfig;
use slicenet::env::{action_count, ActionCodec, Env, EnvConfig};

fn main() -> anyhow::Result<()> {
    for delta in [0.54, 0.18] {
        let units = EnvConfig { delta_mhz: delta, ..Default::default() }.units();
        let codec = ActionCodec::new(units, 3)?;
        println!(
            "Δ = {delta} MHz: {units} units, {} actions, first {:?}, last {:?}",
            action_count(units, 3)?,
            codec.decode(0)?,
            codec.decode(codec.count() - 1)?
        );
    }

    let cfg = RunConfig::desk();
    let mut env = Env::new(cfg.env.clone(), cfg.scenario.clone(), cfg.traffic.clone(), cfg.radio.clone(), 1)?;
    for _ in 0..30 {
        let hard = vec![env.hard_action(); env.num_bs()];
        env.step(&hard)?;
    }
    let bs = 2;
    let codec = *env.codec();
    let mut ranked: Vec<(usize, f64, [f64; 3], f64)> = (0..codec.count())
        .map(|a| {
            let (m, j) = env.preview_bs(bs, a).expect("valid action");
            (a, j, m.ssr, m.se)
        })
        .collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
    let hard = env.hard_action();
    let hard_rank = ranked.iter().position(|r| r.0 == hard).expect("hard action evaluated");
    println!("\nBS {bs}, period {}: best 5 of {} actions (equal split ranks {})", env.period(), codec.count(), hard_rank + 1);
    for (a, j, ssr, se) in ranked.iter().take(5) {
        println!("  {:?}: utility {j:.3}, SE {se:.1}, SSR [{:.3}, {:.3}, {:.3}]", codec.decode3(*a)?, ssr[0], ssr[1], ssr[2]);
    }
    Ok(())
}
