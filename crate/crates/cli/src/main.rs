//! `mfchaos` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime error, 2 assumption probes failed or
//! model constraint violated, 3 assumption probes indeterminate, 64 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfchaos::harness::{self, SimConfig};
use mfchaos::validate::{ProbeConfig, Verdict};
use mfchaos::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_FAIL: u8 = 2;
const EXIT_INDETERMINATE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "mfchaos",
    version,
    about = "Mean-field jump systems: simulation and propagation-of-chaos experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (1 runs sequentially).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even if the assumption probes do not pass.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn load(&self) -> mfchaos::Result<SimConfig> {
        let mut cfg = SimConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the N-particle system for every N of the config and write paths and jump logs.
    Simulate(RunArgs),
    /// Solve the limit, run the coupled N-sweep and fit the decay rates.
    ChaosSweep(RunArgs),
    /// Moment and jump-count diagnostics of the N-particle system.
    Diagnostics(RunArgs),
    /// Probe the structural assumptions of a model.
    Validate {
        /// Take the model, parameters and probe settings from a config.
        #[arg(long, conflicts_with = "model")]
        config: Option<PathBuf>,
        /// Zoo model id with default parameters.
        #[arg(long, required_unless_present = "config")]
        model: Option<String>,
        /// Probe seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// W1 distance between two sample files of equal size.
    Wasserstein {
        a: PathBuf,
        b: PathBuf,
        /// Seed of the subsampling used above the assignment cap.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err.root() {
        Error::Assumptions {
            indeterminate: true, ..
        } => EXIT_INDETERMINATE,
        Error::Assumptions { .. } | Error::Constraint(_) => EXIT_FAIL,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn run(cli: Cli) -> mfchaos::Result<u8> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let runs = harness::run_simulate(&cfg, args.force)?;
            for r in &runs {
                println!("N = {:<6} jumps = {}", r.n, r.jump_log.len());
            }
            if let Some(out) = &cfg.out {
                println!("wrote {}", out.display());
            }
        }
        Command::ChaosSweep(args) => {
            let cfg = args.load()?;
            let report = harness::run_chaos_sweep(&cfg, args.force)?;
            println!("{:>6} {:>24} {:>24} {:>24}", "N", "X-Y", "Y-limit", "X-limit");
            for r in &report.rows {
                println!(
                    "{:>6} {:>12.5e} ± {:<9.2e} {:>12.5e} ± {:<9.2e} {:>12.5e} ± {:<9.2e}",
                    r.n, r.xy.mean, r.xy.std_error, r.ylim.mean, r.ylim.std_error, r.xlim.mean, r.xlim.std_error
                );
            }
            for (name, fit) in [
                ("X-Y", &report.fits.xy),
                ("Y-limit", &report.fits.ylim),
                ("X-limit", &report.fits.xlim),
            ] {
                match fit {
                    Some(f) => println!(
                        "{name:<8} slope {:.3} [{:.3}, {:.3}]  R² {:.3}",
                        f.slope, f.slope_ci.0, f.slope_ci.1, f.r_squared
                    ),
                    None => println!("{name:<8} slope n/a"),
                }
            }
            if let Some(p) = &report.picard {
                println!(
                    "limit: {} Picard iterations, final delta {:.3e}, converged {}",
                    p.deltas.len(),
                    p.deltas.last().copied().unwrap_or(f64::NAN),
                    p.converged
                );
            }
            if let Some(out) = &cfg.out {
                println!("wrote {}", out.display());
            }
        }
        Command::Diagnostics(args) => {
            let cfg = args.load()?;
            let diag = harness::run_diagnostics(&cfg, args.force)?;
            for w in &diag.warnings {
                eprintln!("warning: {w}");
            }
            for m in &diag.moments {
                let t = &m.series.trend;
                println!(
                    "N = {:<6} p = {}  mean {:.4e}  slope CI [{:.3e}, {:.3e}]  {}",
                    m.n,
                    m.series.p,
                    t.mean,
                    t.ci.0,
                    t.ci.1,
                    if m.bounded { "bounded" } else { "growing" }
                );
            }
            for j in &diag.jump_means {
                println!("N = {:<6} jumps per particle {:.4} ± {:.2e}", j.n, j.mean, j.std_error);
            }
            if let Some(ok) = diag.tails_non_increasing {
                println!("jump tails non-increasing in N: {ok}");
            }
        }
        Command::Validate { config, model, seed } => {
            let (id, params, mut probe) = match config {
                Some(path) => {
                    let cfg = SimConfig::load(&path)?;
                    (cfg.model.id, cfg.model.params, cfg.probe)
                }
                None => (model.unwrap_or_default(), Default::default(), ProbeConfig::default()),
            };
            if let Some(s) = seed {
                probe.seed = s;
            }
            let report = harness::run_validate(&id, &params, &probe)?;
            println!("{report}");
            return Ok(match report.overall {
                Verdict::Pass => 0,
                Verdict::Fail => EXIT_FAIL,
                Verdict::Indeterminate => EXIT_INDETERMINATE,
            });
        }
        Command::Wasserstein { a, b, seed } => {
            let w = harness::wasserstein_files(&a, &b, seed)?;
            if w.repeats > 1 {
                println!(
                    "{} (mean of {} subsamples of size {}, std dev {:.3e})",
                    w.mean, w.repeats, w.subsample_size, w.std_dev
                );
            } else {
                println!("{}", w.mean);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
