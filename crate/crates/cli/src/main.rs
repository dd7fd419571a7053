use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use attestpo_cli::{commands, parse_config, ModeSelection, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attestpo", version, about = "Sliding-window Chebyshev attitude estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo replications.
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeSelection>,
    /// Window length in seconds.
    #[arg(long, global = true, allow_negative_numbers = true)]
    window: Option<f64>,
    /// Chebyshev order.
    #[arg(long, global = true)]
    order: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a coning record: imu.csv and truth.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate attitude from an IMU log.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// IMU log (overrides `input.imu`).
        #[arg(long)]
        imu: Option<PathBuf>,
        /// Truth file supplying the initial attitude (overrides `input.truth`).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Monte-Carlo study on simulated records.
    Montecarlo {
        #[command(flatten)]
        common: Common,
    },
    /// Error tables of estimate files against a truth file.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long = "estimate", required = true, num_args = 1..)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn load(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(path) => parse_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(runs) = common.runs {
        config.runs = runs;
    }
    if let Some(mode) = common.mode {
        config.mode = mode;
    }
    if let Some(w) = common.window {
        config.window_size = w;
    }
    if let Some(n) = common.order {
        config.cheb_order = n;
    }
    config.validate()?;
    let out = common.out.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    Ok(match cli.command {
        Command::Simulate { common } => {
            let (config, out) = load(&common)?;
            commands::simulate(&config, &out)?
        }
        Command::Estimate { common, imu, truth } => {
            let (mut config, out) = load(&common)?;
            if imu.is_some() {
                config.input.imu = imu;
            }
            if truth.is_some() {
                config.input.truth = truth;
            }
            commands::estimate(&config, &out)?
        }
        Command::Montecarlo { common } => {
            let (config, out) = load(&common)?;
            commands::montecarlo(&config, &out)?
        }
        Command::Metrics {
            common,
            estimates,
            truth,
        } => {
            let (_, out) = load(&common)?;
            commands::metrics(&estimates, &truth, &out)?
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("some runs did not converge");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
