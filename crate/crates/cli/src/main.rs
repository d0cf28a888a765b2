//! Command-line front end: wires a JSON run config to the pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curlab_core::driver::{self, ConfigFile, RunConfig};

#[derive(Parser)]
#[command(name = "curlab", version, about = "Portfolio-control experiment lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to the config's `out` field.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count override (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load or synthesize the configured data and write the processed series.
    Process(RunArgs),
    /// Generate synthetic data with its exact signal/noise decomposition.
    Synth(RunArgs),
    /// Tune hyperparameters / stage count / label noise; emit a tuned config.
    Tune(RunArgs),
    /// Train replica models for one method and save them.
    Train(RunArgs),
    /// Run the seed-replicated comparison and write the report files.
    Evaluate(RunArgs),
    /// Re-render tables and plots from a finished run directory.
    Report {
        /// Run directory containing results.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), curlab_core::Error> {
    let mut file = ConfigFile::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        file.seed = Some(seed);
    }
    if let Some(workers) = args.workers {
        file.exp.workers = workers;
    }
    if let Some(out) = &args.out {
        file.out = Some(out.display().to_string());
    }
    let cfg = driver::resolve(&file)?;
    let out = cfg.out.clone().ok_or_else(|| {
        curlab_core::Error::Config("no output directory: pass --out or set `out`".into())
    })?;
    Ok((cfg, out))
}

fn run() -> Result<(), curlab_core::Error> {
    match Cli::parse().command {
        Command::Process(args) => {
            let (cfg, out) = load(&args)?;
            let path = driver::cmd_process(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Synth(args) => {
            let (cfg, out) = load(&args)?;
            let (series, truth) = driver::cmd_synth(&cfg, &out)?;
            println!("wrote {}", series.display());
            println!("wrote {}", truth.display());
        }
        Command::Tune(args) => {
            let (cfg, out) = load(&args)?;
            let path = driver::cmd_tune(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Train(args) => {
            let (cfg, out) = load(&args)?;
            for path in driver::cmd_train(&cfg, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate(args) => {
            let (cfg, out) = load(&args)?;
            let files = driver::cmd_evaluate(&cfg, &out)?;
            println!("wrote {}", files.csv.display());
            println!("wrote {}", files.json.display());
            for curve in files.curves {
                println!("wrote {}", curve.display());
            }
        }
        Command::Report { dir } => {
            driver::cmd_report(&dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
