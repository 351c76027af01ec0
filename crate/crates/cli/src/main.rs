//! `drgp`: train deep recurrent GP models, run free simulations, validate the statistics,
//! and time the sharded bound.

mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Battery;
use config::RunArgs;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "drgp",
    version,
    about = "Deep recurrent Gaussian processes for system identification"
)]
struct Cli {
    /// Worker threads for the data-parallel core (default: all cores).
    #[arg(long, global = true, env = "DRGP_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes config.json, model.json, trace.csv, summary.json and train.log.
    Train(RunArgs),
    /// Free-simulate the test split; writes simulation.csv and metrics.json.
    Simulate(RunArgs),
    /// Closed-form statistics against seeded Monte Carlo; exits 1 if any |z| > 3.
    ValidateStats {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Battery::Psi)]
        battery: Battery,
        /// Test fixture: replace Ψ₁ by the undamped feature map.
        #[arg(long, hide = true)]
        perturb_psi1: bool,
        #[arg(long, default_value = "runs/validate")]
        out: PathBuf,
    },
    /// Shard and finish phase wall times; writes bench.csv.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        worker_counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
        n_hat: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        features: usize,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, default_value_t = 8)]
        shards: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
    },
    /// Write a synthetic series as CSV plus a manifest.
    MakeToy {
        /// linear_narx, sine_drive or identity.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[cfg(feature = "parallel")]
fn configure_workers(workers: Option<usize>) {
    if let Some(w) = workers.filter(|&w| w > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            log::warn!("could not size the thread pool to {w}: {e}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_workers(workers: Option<usize>) {
    if workers.is_some_and(|w| w > 1) {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
}

fn run(cli: Cli, log: &logging::Capture) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let mut cfg = args.resolve("train")?;
            cfg.workers = cli.workers;
            commands::train(&cfg, log)?;
        }
        Command::Simulate(args) => {
            let mut cfg = args.resolve("simulate")?;
            cfg.workers = cli.workers;
            commands::simulate(&cfg)?;
        }
        Command::ValidateStats {
            seed,
            instances,
            samples,
            battery,
            perturb_psi1,
            out,
        } => {
            if !commands::validate_stats(seed, instances, samples, battery, perturb_psi1, &out)? {
                log::error!(
                    "statistics battery failed; see {}",
                    out.join("report.json").display()
                );
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench {
            worker_counts,
            n_hat,
            features,
            horizon,
            shards,
            repeats,
            seed,
            out,
        } => commands::bench(
            &worker_counts,
            &n_hat,
            features,
            horizon,
            shards,
            repeats,
            seed,
            &out,
        )?,
        Command::MakeToy {
            kind,
            n,
            seed,
            noise_sd,
            out,
        } => commands::make_toy(&kind, n, seed, noise_sd, &out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = logging::init();
    configure_workers(cli.workers);
    match run(cli, &log) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
