use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use laa_ec_cli::{run_command, CliError, ExperimentSpec};

/// Effective-capacity experiments for LAA/WiFi coexistence.
#[derive(Debug, Parser)]
#[command(name = "laa-ec", version)]
struct Args {
    /// Experiment specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; the table is written to `<command>.csv`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid points (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the relative tolerance used by `validate`.
    #[arg(long)]
    tolerance: Option<f64>,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e @ CliError::Config(_)) => {
            eprintln!("laa-ec: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("laa-ec: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> Result<bool, CliError> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(tol) = args.tolerance {
        if !(tol > 0.0) {
            return Err(CliError::Config("tolerance must be positive".into()));
        }
        spec.tolerance = tol;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&args.out)?;
    let report = pool.install(|| run_command(&spec, Some(&args.out)))?;
    let path = args.out.join(format!("{}.csv", spec.command.as_str()));
    report.table.write(std::fs::File::create(&path)?)?;
    eprintln!("wrote {} rows to {}", report.table.rows.len(), path.display());
    match report.passed {
        Some(false) => {
            eprintln!("validation failed");
            Ok(false)
        }
        _ => Ok(true),
    }
}
