//! Runs the static equal-split baseline on the desk scenario and prints
//! per-slice SSR, SE and utility averaged over the last periods.
//!
//! ```text
//! cargo run --release --example hard_slicing_baseline -- [periods] [seed]
//! ```

use slicenet::config::{Algorithm, RunConfig};
use slicenet::trainer::Trainer;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::desk();
    cfg.algorithm = Algorithm::Hard;
    cfg.periods = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    cfg.seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let summary = Trainer::new(cfg.clone())?.run_in_memory()?;
    let window = (cfg.periods / 2).max(1);
    let t = summary.tail_mean(window);
    println!("hard slicing, {} periods, seed {}: last {window} periods", cfg.periods, cfg.seed);
    println!("  utility {:.4}  reward {:.4}  SE {:.1}", t.utility, t.reward, t.se);
    println!("  SSR volte {:.3}  embb {:.3}  urllc {:.3}", t.ssr[0], t.ssr[1], t.ssr[2]);
    Ok(())
}
