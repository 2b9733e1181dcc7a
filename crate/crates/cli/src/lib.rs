//! Command-line experiment driver for the `voltube` library.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use thiserror::Error;
use voltube_core::model::{validate_hypotheses, HypothesisReport};

use crate::commands::Context;
use crate::output::{Metadata, ViolationSummary, Writer};

/// Points sampled by the hypothesis audit run before every experiment.
pub const AUDIT_SAMPLES: usize = 20_000;
const AUDIT_SEED: u64 = 0x0076_6f6c_7475_6265;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("hypothesis violations: {} regularity, {} growth", .0.r_violations.len(), .0.g_violations.len())]
    Hypothesis(Box<HypothesisReport>),
    #[error("numerical failure: {0}")]
    Numerical(voltube_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<voltube_core::Error> for CliError {
    fn from(e: voltube_core::Error) -> Self {
        match e {
            voltube_core::Error::InvalidParameter(m) => CliError::Config(m),
            voltube_core::Error::BelowThreshold { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Constants,
    Curves,
    Variational,
    Tube,
    Tails,
    Smallballs,
    Wings,
    Moments,
    Scaling,
    Density,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::Curves => "curves",
            Command::Variational => "variational",
            Command::Tube => "tube",
            Command::Tails => "tails",
            Command::Smallballs => "smallballs",
            Command::Wings => "wings",
            Command::Moments => "moments",
            Command::Scaling => "scaling",
            Command::Density => "density",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "voltube",
    version,
    about = "Tube, tail and wing experiments for local-stochastic volatility models"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.n_paths`
    #[arg(long)]
    pub paths: Option<usize>,
    /// Overrides `run.n_steps`
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run even if the hypothesis audit fails; violations are recorded in the outputs.
    #[arg(long)]
    pub allow_unverified: bool,
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(args: &Args) -> Result<Vec<PathBuf>, CliError> {
    let mut loaded = config::load(&args.config)?;
    let run = &mut loaded.config.run;
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(p) = args.paths {
        run.n_paths = p;
    }
    if let Some(s) = args.steps {
        run.n_steps = s;
    }
    if run.n_paths == 0 || run.n_steps == 0 {
        return Err(CliError::Config("paths and steps must be positive".into()));
    }
    if let Some(dir) = &args.out {
        loaded.config.output.directory = dir.clone();
    }
    let spec = loaded.config.model_spec()?;
    let report = validate_hypotheses(&spec, AUDIT_SAMPLES, AUDIT_SEED)?;
    let violations = if report.passes() {
        None
    } else if args.allow_unverified {
        Some(ViolationSummary::from_report(&report))
    } else {
        return Err(CliError::Hypothesis(Box::new(report)));
    };
    let meta = Metadata::new(args.command.name(), &loaded, &spec, violations);
    let writer = Writer::new(&loaded.config.output.directory, &loaded.config.output.formats)?;
    let mut ctx = Context {
        loaded: &loaded,
        spec: &spec,
        meta,
        writer,
    };
    match args.command {
        Command::Constants => commands::constants(&mut ctx),
        Command::Curves => commands::curves(&mut ctx),
        Command::Variational => commands::variational(&mut ctx),
        Command::Tube => commands::tube(&mut ctx),
        Command::Tails => commands::tails(&mut ctx),
        Command::Smallballs => commands::smallballs(&mut ctx),
        Command::Wings => commands::wings(&mut ctx),
        Command::Moments => commands::moments(&mut ctx),
        Command::Scaling => commands::scaling(&mut ctx),
        Command::Density => commands::density(&mut ctx),
    }?;
    Ok(ctx.writer.written)
}
