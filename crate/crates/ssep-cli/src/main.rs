//! `ssep` — command-line driver for the exclusion-process laboratory.
//!
//! Exit codes: `0` every requested verdict passed (or the operation produces
//! no verdicts), `1` at least one verdict failed, `2` configuration or usage
//! error, `3` runtime failure (simulation, quadrature, missing or mismatched
//! artifacts, I/O).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "ssep",
    version,
    about = "Simulation and verification laboratory for the 1-D symmetric simple exclusion process",
    long_about = "Drives replica ensembles of the symmetric simple exclusion process, the \
                  finite-difference density evolution, and quadrature evaluations of the \
                  closed-form Gaussian covariances, then joins the artifacts into verdict \
                  reports.  Every artifact embeds the SHA-256 hash of the effective run \
                  configuration; downstream steps refuse inputs produced under a different \
                  configuration."
)]
struct Cli {
    /// Run configuration file (TOML, `schema = "ssep.run.v1"`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the plan's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the plan's replica count.
    #[arg(long, global = true)]
    replicas: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (1 selects the sequential path).  Defaults to the
    /// SSEP_THREADS environment variable, then to all cores.
    #[arg(long, global = true, env = "SSEP_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the replica ensemble and write the sample set.
    Simulate,
    /// Solve the discrete and continuum density evolutions; write the field
    /// grid and the mesh-convergence table.
    Pde,
    /// Evaluate the covariance formulas by quadrature; write the theory table.
    Theory,
    /// Join the sample set with the theory table and judge each covariance.
    Compare,
    /// Run the exact-identity and small-lattice oracle suites.
    Verify,
    /// Merge the artifacts into a single verdict report.
    Report,
}

#[derive(Debug, Error)]
enum TopError {
    #[error("a run configuration is required: pass --config <FILE>")]
    MissingConfig,
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Cmd(#[from] commands::CmdError),
}

impl TopError {
    fn exit_code(&self) -> u8 {
        match self {
            TopError::MissingConfig | TopError::Config(_) => 2,
            TopError::Cmd(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<bool, TopError> {
    let path = cli.config.as_deref().ok_or(TopError::MissingConfig)?;
    let mut cfg = config::load_config(path)?;
    cfg.apply_overrides(cli.seed, cli.replicas, cli.out.as_deref());
    let hash = cfg.hash();
    let mode = commands::install_threads(cli.threads)?;
    let ok = match cli.command {
        Cmd::Simulate => commands::simulate(&cfg, &hash, mode)?,
        Cmd::Pde => commands::run_pde(&cfg, &hash)?,
        Cmd::Theory => commands::theory(&cfg, &hash)?,
        Cmd::Compare => commands::compare(&cfg, &hash)?,
        Cmd::Verify => commands::run_verify(&cfg, &hash)?,
        Cmd::Report => commands::report(&cfg, &hash)?,
    };
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
