use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slicenet::config::{Algorithm, RunConfig};
use slicenet::sweep::{self, SweepSpec};
use slicenet::{plotdata, selftest, trainer};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "slicenet", version, about = "Multi-cell RAN slicing simulator with multi-agent DQN/A2C learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key.path=value` applied on top of the config (repeatable).
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

impl RunArgs {
    fn base_text(&self) -> Result<String> {
        match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(String::new()),
        }
    }

    fn all_overrides(&self) -> Vec<String> {
        let mut ovs = self.overrides.clone();
        if let Some(a) = self.algorithm {
            ovs.push(format!("algorithm=\"{a}\""));
        }
        if let Some(s) = self.seed {
            ovs.push(format!("seed={s}"));
        }
        ovs
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics, summary and checkpoints.
    Run(RunArgs),
    /// Run every combination of a sweep file, one directory per run.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Sweep definition; omitted means a single run.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Gradient checks, codec round trips, attention rows and toy oracle.
    Selftest {
        /// Toy-MDP updates per learner.
        #[arg(long, default_value_t = 20_000)]
        toy_updates: usize,
    },
    /// Long-format CSV of per-period means and rolling medians.
    Plotdata {
        /// A run directory, or a sweep directory containing several.
        dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn report(label: &str, summary: &trainer::RunSummary) {
    let tail = summary.tail_mean(500);
    println!(
        "{label}: utility {:.4} se {:.4} ssr [{:.3}, {:.3}, {:.3}] over the last {} periods (reward clips: {})",
        tail.utility,
        tail.se,
        tail.ssr[0],
        tail.ssr[1],
        tail.ssr[2],
        summary.periods.len().min(500),
        summary.clip_count
    );
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = RunConfig::with_overrides(&args.base_text()?, &args.all_overrides())?;
    let summary = trainer::run_experiment(&cfg, &args.out)?;
    report(&args.out.display().to_string(), &summary);
    Ok(())
}

fn run_sweep(args: RunArgs, spec: Option<&Path>, jobs: usize) -> Result<()> {
    let spec = match spec {
        Some(p) => SweepSpec::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => SweepSpec::default(),
    };
    let runs = sweep::expand(&args.base_text()?, &args.all_overrides(), &spec, &args.out)?;
    eprintln!("{} runs, {} at a time", runs.len(), jobs);
    let mut failed = 0;
    for (r, res) in runs.iter().zip(sweep::execute(&runs, jobs)) {
        match res {
            Ok(s) => report(&r.label, &s),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", r.label);
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} runs failed", runs.len());
    }
    Ok(())
}

fn run_selftest(toy_updates: usize) -> Result<()> {
    let checks = selftest::run_all(toy_updates);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} self-check(s) failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Sweep { run, sweep, jobs } => run_sweep(run, sweep.as_deref(), jobs),
        Command::Selftest { toy_updates } => run_selftest(toy_updates),
        Command::Plotdata { dir, window, out } => {
            let n = match out {
                Some(p) => plotdata::write(&dir, window, std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?)?,
                None => plotdata::write(&dir, window, std::io::stdout().lock())?,
            };
            eprintln!("{n} run(s)");
            Ok(())
        }
    }
}
