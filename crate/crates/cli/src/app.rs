//! Argument parsing and dispatch for the `clspec` binary.
//!
//! Configuration layers, later ones winning: the `--config` document,
//! `CLSPEC_*` environment variables, then command-line flags.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::commands::{self, Command, Outcome};
use crate::config::{parse_layered, RunConfig};

pub const DEFAULT_OUTPUT_DIR: &str = "clspec-out";

#[derive(Debug, Parser)]
#[command(
    name = "clspec",
    version,
    about = "Sparse low-rank-variance random matrix experiments"
)]
pub struct Cli {
    /// JSON configuration file; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for report.json, records.csv and manifest.json.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Base seed; overrides the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for sampling and decomposition.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Solve the self-consistent equations on a z grid.
    Solve(SolveArgs),
    /// Solve the discretized kernel equation.
    Qve,
    /// Sample one matrix and write its upper-triangle nonzeros.
    Sample,
    /// Local-law statistics of one matrix at a list of z.
    Stats,
    /// Monte Carlo local-law sweep.
    LocalLaw,
    /// Gap-ratio comparison against GOE.
    Universality,
    /// Degree-tail exponent fit.
    Degrees,
    /// Rerun the experiment recorded in a manifest.
    Replay {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
    /// Print the resolved configuration and exit.
    Config,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Energy range as LO,HI,POINTS.
    #[arg(long, value_name = "LO,HI,N", value_parser = parse_range)]
    pub energies: Option<(f64, f64, usize)>,
    /// Range of Im z as LO,HI,POINTS.
    #[arg(long, value_name = "LO,HI,N", value_parser = parse_range)]
    pub etas: Option<(f64, f64, usize)>,
    #[arg(long, value_enum, default_value_t = SpacingArg::Linear)]
    pub eta_spacing: SpacingArg,
    /// Solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpacingArg {
    Linear,
    Log,
}

fn parse_range(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected LO,HI,N, got {s:?}"));
    }
    let lo = parts[0].parse().map_err(|e| format!("{}: {e}", parts[0]))?;
    let hi = parts[1].parse().map_err(|e| format!("{}: {e}", parts[1]))?;
    let n = parts[2].parse().map_err(|e| format!("{}: {e}", parts[2]))?;
    Ok((lo, hi, n))
}

impl Cli {
    /// Flag overrides as `(dotted.path, value)` pairs.
    pub fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        if let Some(seed) = self.seed {
            out.push(("seed".into(), json!(seed)));
        }
        if let Some(t) = self.threads {
            out.push(("threads".into(), json!(t)));
        }
        if let Some(dir) = &self.out {
            out.push(("output_dir".into(), json!(dir)));
        }
        if let Sub::Solve(a) = &self.command {
            if let Some((lo, hi, n)) = a.energies {
                out.push((
                    "solve.energy_range".into(),
                    json!({"lower": lo, "upper": hi, "points": n}),
                ));
            }
            if let Some((lo, hi, n)) = a.etas {
                let spacing = match a.eta_spacing {
                    SpacingArg::Linear => "linear",
                    SpacingArg::Log => "log",
                };
                out.push((
                    "solve.eta_range".into(),
                    json!({"lower": lo, "upper": hi, "points": n, "spacing": spacing}),
                ));
            }
            if let Some(tol) = a.tol {
                out.push(("solver.tol".into(), json!(tol)));
            }
        }
        out
    }

    pub fn resolve_config(&self) -> Result<RunConfig> {
        let text = commands::read_config_text(self.config.as_deref())?;
        let config = parse_layered(&text, std::env::vars(), &self.overrides())?;
        Ok(config)
    }
}

fn output_dir(cli: &Cli, config: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Sizes the global worker pool; a pool that already exists is kept.
fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

fn announce(summary: &commands::RunSummary) {
    let verdict = match summary.outcome {
        Outcome::Pass => "PASS",
        Outcome::Fail => "FAIL",
    };
    println!(
        "{} {verdict} -> {}",
        summary.manifest.subcommand,
        summary.dir.display()
    );
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let command = match &cli.command {
        Sub::Replay { manifest } => {
            configure_threads(cli.threads);
            let out = output_dir(cli, None);
            let summary = commands::replay(manifest, &out)?;
            announce(&summary);
            return Ok(summary.outcome);
        }
        Sub::Config => {
            println!("{}", cli.resolve_config()?.to_canonical_json());
            return Ok(Outcome::Pass);
        }
        Sub::Solve(_) => Command::Solve,
        Sub::Qve => Command::Qve,
        Sub::Sample => Command::Sample,
        Sub::Stats => Command::Stats,
        Sub::LocalLaw => Command::LocalLaw,
        Sub::Universality => Command::Universality,
        Sub::Degrees => Command::Degrees,
    };
    let config = cli.resolve_config()?;
    configure_threads(config.threads);
    let out = output_dir(cli, Some(&config));
    let summary = commands::run(command, &config, &out)
        .with_context(|| format!("{} failed", command.name()))?;
    announce(&summary);
    Ok(summary.outcome)
}

/// Parses `args` (including the program name) and executes them.
pub fn run_args<I, S>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(&cli)
}
