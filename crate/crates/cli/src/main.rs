use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convloc_cli::commands;
use convloc_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "convloc", version, about = "Grid Markov localisation with convolutional odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic run (ground truth, odometry, observations).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the filter over a frame directory.
    Localize {
        #[arg(long)]
        config: PathBuf,
        /// Frame directory; defaults to the config's output_dir.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Where est.csv and diagnostics.csv go; defaults to the frame directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save the posterior volume every K frames.
        #[arg(long, value_name = "K")]
        dump_volume: Option<usize>,
    },
    /// Compute ATE metrics for one or more estimates, ranked by RMSE.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        /// Estimate file, optionally as NAME=PATH. Repeatable.
        #[arg(long = "est", required = true)]
        estimates: Vec<String>,
        /// Write the metrics CSV here instead of only printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the stacked odometry kernel as PGM and LVOL.
    KernelDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time propagate and update, single-threaded versus parallel.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Threads for the parallel run; 0 uses every core.
        #[arg(long)]
        threads: Option<usize>,
        /// Directory for bench.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = commands::simulate(&cfg, out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Localize {
            config,
            frames,
            out,
            dump_volume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let poses = commands::localize(&cfg, frames.as_deref(), out.as_deref(), dump_volume)?;
            println!("{} poses estimated", poses.len());
        }
        Command::Eval { gt, estimates, out } => {
            let est: Vec<_> = estimates.iter().map(|a| commands::parse_estimate_arg(a)).collect();
            print!("{}", commands::eval(&gt, &est, out.as_deref())?);
        }
        Command::KernelDump { config, out } => {
            let cfg = RunConfig::load(&config)?;
            commands::kernel_dump(&cfg, out.as_deref())?;
        }
        Command::Bench {
            config,
            reps,
            threads,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let report = commands::bench(&cfg, reps, threads, out.as_deref())?;
            println!("{}", report.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("convloc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
