//! Trains GAT-DQN on the desk scenario, writing metrics, summary and
//! checkpoints to a run directory, and compares it against the equal split.
//!
//! ```text
//! cargo run --release --example train_gat_dqn -- [periods] [seed] [out_dir]
//! ```

use slicenet::config::{Algorithm, RunConfig};
use slicenet::trainer::{run_experiment, Trainer};
use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::desk();
    cfg.algorithm = Algorithm::GatDqn;
    cfg.periods = args.next().map(|s| s.parse()).transpose()?.unwrap_or(600);
    cfg.seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("slicenet-gat-dqn"));
    cfg.output.checkpoint_interval = (cfg.periods / 3).max(1);
    cfg.output.log_interval = (cfg.periods / 10).max(1);

    let summary = run_experiment(&cfg, &out)?;
    let mut hard_cfg = cfg.clone();
    hard_cfg.algorithm = Algorithm::Hard;
    let hard = Trainer::new(hard_cfg)?.run_in_memory()?;

    let window = (cfg.periods / 4).max(1);
    for (name, s) in [("gat-dqn", &summary), ("hard", &hard)] {
        let t = s.tail_mean(window);
        println!("{name:<8} last {window} periods: utility {:.3}, SE {:.1}, SSR [{:.3}, {:.3}, {:.3}]", t.utility, t.se, t.ssr[0], t.ssr[1], t.ssr[2]);
    }
    println!("run directory: {}", out.display());
    Ok(())
}
