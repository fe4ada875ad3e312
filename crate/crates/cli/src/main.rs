//! `wrtree`: run energy-tree experiments described by a JSON config.
//!
//! Exit codes: 0 success, 1 invariant violation or failed computation,
//! 2 configuration or usage error.

mod commands;
mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wrtree::error::WrError;

use config::Problem;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Engine(#[from] WrError),
    #[error("violation: {0}")]
    Violation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => 2,
            CliError::Engine(
                WrError::InvalidWord(_)
                | WrError::InvalidParameter(_)
                | WrError::SymbolOutOfRange { .. }
                | WrError::DimensionMismatch { .. },
            ) => 2,
            CliError::Engine(_) | CliError::Violation(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "wrtree", version, about = "Weighted-residual energy tree experiments")]
struct Cli {
    /// Problem description (JSON).
    #[arg(short, long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Worker threads for sampling; defaults to WR_WORKERS, then 1.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Split,
    Tree,
    Paths,
    Martingale,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Residual, dissipations, energies and transition rows at a word.
    Inspect {
        #[arg(long, default_value = "")]
        word: String,
    },
    /// Cylinder probabilities of every word of a given length (CSV).
    Enumerate {
        #[arg(long)]
        depth: usize,
        /// config, trace or vector.
        #[arg(long, default_value = "config")]
        bias: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampled paths, one row per step (CSV).
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invariant suites; exits 1 on any violation.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// Tree depth explored by the exhaustive checks.
        #[arg(long, default_value_t = 6)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expected mass against the geometric extinction bound (JSON).
    Extinction {
        #[arg(long)]
        horizon: usize,
        #[arg(long, value_enum, default_value = "exact")]
        mode: Mode,
        /// config, trace or vector.
        #[arg(long, default_value = "config")]
        bias: String,
        #[arg(long)]
        samples: Option<usize>,
        /// Depth of the leakage scan; defaults to min(horizon, 10).
        #[arg(long)]
        scan_depth: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Boundary law of the trace-biased walk with densities and checks (JSON).
    Boundary {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        cluster_tol: Option<f64>,
        /// Depth of the compatibility scan behind the densities; defaults to min(depth, 10).
        #[arg(long)]
        scan_depth: Option<usize>,
        /// Extra vectors for boundary densities, e.g. `--x 1,0`.
        #[arg(long)]
        x: Vec<String>,
        #[arg(long, default_value = "boundary.json")]
        out: PathBuf,
    },
}

fn workers(flag: Option<usize>) -> Result<usize, CliError> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("WR_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("WR_WORKERS: not a count: {v}")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(CliError::Config("workers: must be at least 1".into()));
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = workers(cli.workers)?;
    let problem = Problem::load(&cli.config)?;
    match cli.command {
        Command::Inspect { word } => commands::emit(None, &commands::inspect(&problem, &word)?),
        Command::Enumerate { depth, bias, out } => {
            commands::emit(out.as_deref(), &commands::enumerate(&problem, depth, &bias)?)
        }
        Command::Sample { n, max_depth, out } => {
            let depth = max_depth.unwrap_or(problem.limits.max_depth);
            commands::emit(out.as_deref(), &commands::sample(&problem, n, depth, workers)?)
        }
        Command::Verify { suite, depth, out } => {
            let name = suite.to_possible_value().expect("named").get_name().to_string();
            let report = verify::run(&problem, &name, depth, workers)?;
            commands::emit(out.as_deref(), &commands::json(&report)?)?;
            if report.pass {
                Ok(())
            } else {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.check.as_str())
                    .collect();
                Err(CliError::Violation(failed.join("; ")))
            }
        }
        Command::Extinction {
            horizon,
            mode,
            bias,
            samples,
            scan_depth,
            out,
        } => {
            let mode = match mode {
                Mode::Exact => "exact",
                Mode::Mc => "mc",
            };
            let text = commands::extinction(&problem, horizon, mode, &bias, samples, scan_depth, workers)?;
            commands::emit(out.as_deref(), &text)
        }
        Command::Boundary {
            samples,
            depth,
            cluster_tol,
            scan_depth,
            x,
            out,
        } => {
            let d = problem.tree.spec().dim();
            let extra = x
                .iter()
                .map(|s| commands::parse_vector(s, d))
                .collect::<Result<Vec<_>, _>>()?;
            let depth = depth.unwrap_or(problem.limits.max_depth);
            let text = commands::boundary(
                &problem,
                samples.unwrap_or(problem.limits.samples),
                depth,
                scan_depth.unwrap_or(depth.min(10)),
                cluster_tol.unwrap_or(problem.cluster_tol),
                &extra,
                workers,
            )?;
            commands::emit(Some(Path::new(&out)), &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wrtree: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
