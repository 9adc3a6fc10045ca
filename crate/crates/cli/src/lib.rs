//! The `crossgr` command line: dataset statistics, training, evaluation,
//! model comparison and a small grid runner, all driven by a TOML run file.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration or input
//! error, 3 training abort, 4 checkpoint/data mismatch, 5 partial
//! comparison failure.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_kinds, EvalSettings, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{failed} of {total} models failed: {detail}")]
    Partial {
        failed: usize,
        total: usize,
        detail: String,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Output { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Training(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Partial { .. } => 5,
        }
    }
}

impl From<crossgr::Error> for CliError {
    fn from(e: crossgr::Error) -> Self {
        use crossgr::Error as E;
        match e {
            E::Checkpoint(_) => CliError::Checkpoint(e.to_string()),
            E::NonFiniteLoss { .. } | E::Contract(_) | E::Scoring { .. } => {
                CliError::Training(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "crossgr",
    version,
    about = "Cross-market recommendation with graph isomorphism networks"
)]
pub struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, default_value = "crossgr.toml")]
    pub config: PathBuf,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output root; artifacts go to `<out>/<name>/`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ModelArgs {
    /// Model kind(s): gmf, mlp, nmf, itemcf, usercf, crossgr, random.
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Embedding width d for every neural model.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Sampled negatives per training positive.
    #[arg(long)]
    pub num_negative: Option<usize>,
    /// Caps the number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-market counts, rating histogram and item overlaps.
    Stats,
    /// Train one model and save its best checkpoint.
    Train(ModelArgs),
    /// Evaluate saved checkpoints on the test split.
    Eval {
        /// Checkpoint file(s); defaults to the run directory's checkpoint.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Train every listed model on identical splits and compare them.
    Compare(ModelArgs),
    /// Grid search over the `[grid]` lists, selecting on validation NDCG.
    Grid(ModelArgs),
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let model = match &self.command {
            Command::Train(m) | Command::Compare(m) | Command::Grid(m) => m.clone(),
            _ => ModelArgs::default(),
        };
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            latent_dim: model.latent_dim,
            num_negative: model.num_negative,
            max_epochs: model.epochs,
        }
    }
}

/// Loads the configuration, applies overrides and dispatches. Human-readable
/// output goes to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut config = RunConfig::load(&cli.config)?;
    config.apply(&cli.overrides());
    config.validate()?;
    match &cli.command {
        Command::Stats => commands::stats(&config, out).map(|_| ()),
        Command::Train(m) => {
            let kinds = parse_kinds(&m.models)?;
            let kind = match kinds.as_slice() {
                [] => crossgr::registry::ModelKind::CrossGr,
                [k] => *k,
                _ => return Err(CliError::Config("train takes a single --model".into())),
            };
            commands::train(&config, kind, out).map(|_| ())
        }
        Command::Eval { checkpoints } => commands::eval(&config, checkpoints, out).map(|_| ()),
        Command::Compare(m) => {
            let kinds = if m.models.is_empty() {
                match &config.models {
                    Some(list) => parse_kinds(list)?,
                    None => crossgr::registry::ModelKind::SUITE.to_vec(),
                }
            } else {
                parse_kinds(&m.models)?
            };
            commands::compare(&config, &kinds, out).map(|_| ())
        }
        Command::Grid(m) => {
            let kinds = parse_kinds(&m.models)?;
            let kind = match kinds.as_slice() {
                [] => crossgr::registry::ModelKind::CrossGr,
                [k] => *k,
                _ => return Err(CliError::Config("grid takes a single --model".into())),
            };
            commands::grid(&config, kind, out).map(|_| ())
        }
    }
}

/// Entry point shared by the binary and tests: parses `args` (including the
/// program name) and returns the process exit code.
pub fn main_with_args<I, T>(
    args: I,
    out: &mut dyn std::io::Write,
    err: &mut dyn std::io::Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
