use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;
use sharp::experiment::{self, ExperimentConfig};
use sharp::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "sharp", version, about = "Stochastic restoration-prior reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for seed-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, solve and score every seed of a config.
    Run { config: PathBuf },
    /// Run the quadrature oracle suite.
    Validate,
    /// Check the averaged-gradient convergence bound on a config.
    Audit { config: PathBuf },
    /// Cartesian sweep of dotted config paths.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Numerical(_) | Error::Refused(_) => EXIT_RUNTIME,
    }
}

fn load(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf), Error> {
    let (mut cfg, base) = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        // relative to the working directory, not the config
        cfg.output_dir = std::env::current_dir()?.join(out);
    }
    Ok((cfg, base))
}

fn read_grid(path: &Path) -> Result<BTreeMap<String, Vec<Value>>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("grid {}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Run { config } => {
            let (cfg, base) = load(cli, config)?;
            let out = experiment::run_experiment(&cfg, &base, cli.threads)?;
            if !cli.quiet {
                print!("{}", experiment::summary_csv(&out.rows));
                eprintln!("outputs written to {}", out.output_dir.display());
            }
            Ok(0)
        }
        Command::Validate => {
            let checks = experiment::validate()?;
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                if !cli.quiet || !c.passed {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            Ok(if ok { 0 } else { EXIT_VALIDATION })
        }
        Command::Audit { config } => {
            let (cfg, base) = load(cli, config)?;
            let report = experiment::audit_experiment(&cfg, &base, cli.threads)?;
            if !cli.quiet {
                print!("{}", report.to_text());
            }
            Ok(if report.pass { 0 } else { EXIT_VALIDATION })
        }
        Command::Sweep { config, grid } => {
            let (cfg, base) = load(cli, config)?;
            let grid = read_grid(grid)?;
            let out = experiment::sweep(&cfg, &base, &grid, cli.threads)?;
            if !cli.quiet {
                print!("{}", std::fs::read_to_string(&out.summary_path)?);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence { iteration, .. } = &e {
                eprintln!("diverged at iteration {iteration}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
