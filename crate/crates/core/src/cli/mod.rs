//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] from an optional flat config
//! file plus flags, runs one computation, and writes a CSV table to `out`
//! (or stdout).

pub mod commands;
pub mod config;
pub mod csv;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{execute, Report};
pub use config::{CommandKind, ConfigError, Origin, PupilChoice, RawConfig, RunConfig};
pub use csv::{format_number, Cell, CsvTable};

#[derive(Debug, Parser)]
#[command(
    name = "pairqfi",
    version,
    about = "Fisher-information limits for a point-source pair"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Separation block of the QFI and its inverse.
    QcrbLl(Overrides),
    /// Centroid QCRB along a sweep of one separation component.
    QcrbSs(Overrides),
    /// Randomized checks of the exact model identities.
    Verify(Overrides),
    /// Zernike channel probabilities and derivatives.
    Channels(Overrides),
    /// Classical Fisher information of the channel counts.
    Fi(Overrides),
    /// Monte Carlo maximum-likelihood estimation experiment.
    Simulate(Overrides),
}

impl Command {
    fn split(&self) -> (CommandKind, &Overrides) {
        match self {
            Command::QcrbLl(o) => (CommandKind::QcrbLl, o),
            Command::QcrbSs(o) => (CommandKind::QcrbSs, o),
            Command::Verify(o) => (CommandKind::Verify, o),
            Command::Channels(o) => (CommandKind::Channels, o),
            Command::Fi(o) => (CommandKind::Fi, o),
            Command::Simulate(o) => (CommandKind::Simulate, o),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Separation `l_x,l_y,l_z`.
    #[arg(long, allow_hyphen_values = true)]
    pub l: Option<String>,
    /// Centroid `s_x,s_y,s_z`.
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<String>,
    /// Radial quadrature order.
    #[arg(long)]
    pub nr: Option<String>,
    /// Angular quadrature order.
    #[arg(long)]
    pub ntheta: Option<String>,
    /// Number of Zernike projection channels.
    #[arg(long)]
    pub channels: Option<String>,
    /// Photons per frame.
    #[arg(long)]
    pub photons: Option<String>,
    /// Random scenes for `verify`.
    #[arg(long)]
    pub samples: Option<String>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Numerical(#[from] crate::Error),

    #[error("consistency check failed: {0}")]
    Consistency(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical degeneracy,
    /// 4 for internal-consistency failures.
    pub fn exit_code(&self) -> i32 {
        use crate::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numerical(e) => match e {
                E::InvalidQuadrature(_)
                | E::NonFinite { .. }
                | E::EmptyPupil
                | E::ZernikeIndex { .. }
                | E::InvalidSimulation(_) => 2,
                E::DerivativeMismatch { .. } | E::SimplexViolation(_) => 4,
                E::Oscillation { .. }
                | E::Degenerate { .. }
                | E::SingularBlock { .. }
                | E::AllChannelsBelowFloor { .. } => 3,
            },
            CliError::Consistency(_) => 4,
        }
    }
}

/// Merges the config file and flags into one resolved configuration.
pub fn resolve(kind: CommandKind, o: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut raw = match &o.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    let flags = [
        ("l", &o.l),
        ("s", &o.s),
        ("seed", &o.seed),
        ("out", &o.out),
        ("nr", &o.nr),
        ("ntheta", &o.ntheta),
        ("channels", &o.channels),
        ("photons", &o.photons),
        ("samples", &o.samples),
        ("threads", &o.threads),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            raw.set(key, v, Origin::Flag(format!("--{key}")))?;
        }
    }
    for pair in &o.set {
        raw.set_pair(pair)?;
    }
    raw.resolve(kind)
}

/// Runs a parsed command line, writing the table to `out` or stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (kind, overrides) = cli.command.split();
    let cfg = resolve(kind, overrides)?;
    let report = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool construction")
            .install(|| execute(&cfg))?,
        None => execute(&cfg)?,
    };
    let text = report.table.render();
    match &cfg.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?,
        None => print!("{text}"),
    }
    match report.consistency_failure {
        Some(msg) => Err(CliError::Consistency(msg)),
        None => Ok(()),
    }
}
