//! Command line driver: reads a JSON problem config, runs one analysis and
//! writes CSV or JSON.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use distspec_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    /// Invariant checks ran but some failed.
    #[error("{0}")]
    Checks(String),
}

impl CliError {
    pub fn field(path: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{path}: {msg}"))
    }

    /// 0 ok, 1 validation, 2 non-convergence, 3 theory violation, 4 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Structural(_) | Error::Validation(_)) => 1,
            CliError::Core(Error::Accuracy { .. } | Error::SingularTransfer { .. }) => 2,
            CliError::Core(Error::TheoryViolation(_)) | CliError::Checks(_) => 3,
            CliError::Core(Error::Configuration(_)) | CliError::Config(_) | CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "distspec",
    version,
    about = "Spectral analysis of measure-coefficient first-order systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Options {
    /// Problem config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance overrides, `key=value,...`.
    #[arg(long, global = true)]
    pub tol_override: Option<String>,
    /// `lo,hi,step,eps1[,eps2...]`
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda_grid: Option<String>,
    /// Decreasing `ε` values, `e1,e2,...`.
    #[arg(long, global = true)]
    pub eps_schedule: Option<String>,
    /// Spectral window `lo,hi`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub range: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Check measures, J and boundary conditions.
    Validate,
    /// Atoms, partition points and the dimensions of the transform range.
    Analyze,
    /// Weyl matrix on a grid (CSV).
    Mfun,
    /// Spectral measure atoms (JSON).
    Tau,
    /// Eigenvalues of a regular problem (CSV).
    Eigen,
    /// Eigenfunction expansion coefficients (CSV) and Parseval summary.
    Expand,
    /// Invariant suite with pass/fail report (JSON).
    Verify,
    /// Poisson quotient scans (CSV).
    FatouDemo,
}

impl Command {
    pub fn stem(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Analyze => "analyze",
            Command::Mfun => "mfun",
            Command::Tau => "tau",
            Command::Eigen => "eigen",
            Command::Expand => "expand",
            Command::Verify => "verify",
            Command::FatouDemo => "fatou-demo",
        }
    }
}

/// Rendered command output.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub primary: Artifact,
    pub summary: Option<Artifact>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Json(String),
    Csv(String),
}

impl Artifact {
    pub fn text(&self) -> &str {
        match self {
            Artifact::Json(s) | Artifact::Csv(s) => s,
        }
    }

    fn ext(&self) -> &'static str {
        match self {
            Artifact::Json(_) => "json",
            Artifact::Csv(_) => "csv",
        }
    }
}

/// Run a command and return its output together with a failure, if any;
/// failing checks still produce a report.
pub fn execute(command: Command, opts: &Options) -> (Option<Output>, Option<CliError>) {
    match commands::dispatch(command, opts) {
        Ok((out, failure)) => (Some(out), failure),
        Err(e) => (None, Some(e)),
    }
}

fn write(opts: &Options, command: Command, out: &Output) -> Result<(), CliError> {
    match &opts.out {
        None => {
            print!("{}", out.primary.text());
            if let Some(s) = &out.summary {
                eprint!("{}", s.text());
            }
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            let put = |name: String, a: &Artifact| {
                let path = dir.join(format!("{name}.{}", a.ext()));
                std::fs::write(&path, a.text()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
            };
            put(command.stem().to_string(), &out.primary)?;
            if let Some(s) = &out.summary {
                put(format!("{}_summary", command.stem()), s)?;
            }
        }
    }
    Ok(())
}

/// Full CLI run; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (out, failure) = execute(cli.command, &cli.opts);
    if let Some(out) = &out {
        if let Err(e) = write(&cli.opts, cli.command, out) {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    }
    match failure {
        None => 0,
        Some(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
