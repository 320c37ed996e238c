//! Expands the slice-weight sweep over a short desk run and executes it,
//! then prints the per-slice SSR each weighting reaches.
//!
//! ```text
//! cargo run --release --example beta_sweep -- [periods] [jobs]
//! ```

use slicenet::config::RunConfig;
use slicenet::sweep::{execute, expand, SweepSpec};
use std::path::Path;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let periods: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let jobs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let base = std::fs::read_to_string(configs.join("desk.toml"))?;
    let spec = SweepSpec::load(&configs.join("sweeps/beta_c1.toml"))?;
    let out = std::env::temp_dir().join("slicenet-beta-sweep");
    let runs = expand(&base, &[format!("periods={periods}")], &spec, &out)?;
    println!("{} runs under {}", runs.len(), out.display());
    for (run, result) in runs.iter().zip(execute(&runs, jobs)) {
        let t = result?.tail_mean((periods / 4).max(1) as usize);
        let RunConfig { env, .. } = &run.config;
        println!(
            "{:<28} β {:?} c1 {:>4}: utility {:.3}, SSR [{:.3}, {:.3}, {:.3}]",
            run.label, env.beta, env.c1, t.utility, t.ssr[0], t.ssr[1], t.ssr[2]
        );
    }
    Ok(())
}
