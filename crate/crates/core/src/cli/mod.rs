//! Command-line front end.
//!
//! Every subcommand reads an optional TOML run config, applies `--seed`, and
//! writes under `--out`:
//!
//! ```text
//! <out>/config.snapshot        resolved config, accepted by --config
//! <out>/data/                  generated datasets
//! <out>/checkpoints/           epoch_XXX.ckpt, best.ckpt, final.ckpt, no_decor.ckpt
//! <out>/logs/trainlog.jsonl    per-iteration and per-epoch records
//! <out>/results/*.csv|json     evaluation outputs
//! ```

mod commands;
mod config;
mod selfcheck;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_ablate, cmd_eval, cmd_generate, cmd_gradcheck, cmd_relevance, cmd_train, RunLayout};
pub use config::{EvalConfig, OutputConfig, RunConfig};
pub use selfcheck::{run_self_checks, SelfCheckRow};

use crate::autodiff::AutodiffError;
use crate::inference::{InferenceError, RelevanceMode};
use crate::losses::LossError;
use crate::meta::MetaError;
use crate::model::ModelError;
use crate::synthdata::DataError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numerical, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// `error kind=<kind> code=<n> message=<json string>` on one line.
    pub fn line(&self) -> String {
        format!(
            "error kind={} code={} message={}",
            self.kind.as_str(),
            self.exit_code(),
            serde_json::Value::String(self.message.replace('\n', " "))
        )
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteProbe { .. } => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Autodiff(a) => a.into(),
            ModelError::InvalidWidth { .. } => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Autodiff(a) => a.into(),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Autodiff(a) => a.into(),
            InferenceError::Model(m) => m.into(),
            InferenceError::Loss(l) => l.into(),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        let kind = match e.root() {
            MetaError::NonFinite { .. } | MetaError::Autodiff(AutodiffError::NonFinite { .. }) => ErrorKind::Numerical,
            MetaError::Config(_) | MetaError::TooFewDomains(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ramoe", version, about = "Relevance-aware mixture of domain experts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the data and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `output.dir` of the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source and target datasets.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the full model and, unless disabled, the no-decorrelation variant.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Retrieval metrics of a checkpoint on a target dataset file.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Domain id inside the data file; required when it holds several.
        #[arg(long)]
        domain: Option<usize>,
    },
    /// Ablation, integration and gallery-only tables of a training run.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directory written by `train`; defaults to `--out`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Relevance report and heatmap of one or more target files.
    Relevance {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Finite-difference self checks of every loss and the meta-gradient.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    AllSamples,
    GalleryOnly,
}

impl From<ModeArg> for RelevanceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AllSamples => RelevanceMode::AllSamples,
            ModeArg::GalleryOnly => RelevanceMode::GalleryOnly,
        }
    }
}

/// Runs a parsed command line and returns what was written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Generate { common } => {
            let (cfg, out) = config::resolve(&common)?;
            cmd_generate(&cfg, &out)
        }
        Command::Train { common } => {
            let (cfg, out) = config::resolve(&common)?;
            cmd_train(&cfg, &out)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            domain,
        } => {
            let (cfg, out) = config::resolve(&common)?;
            cmd_eval(&cfg, &checkpoint, &data, domain, &out)
        }
        Command::Ablate { common, run } => {
            let run_dir = run.or_else(|| common.out.clone());
            let common = CommonArgs {
                config: common
                    .config
                    .clone()
                    .or_else(|| run_dir.as_ref().map(|d| RunLayout::new(d).snapshot())),
                ..common
            };
            let (cfg, out) = config::resolve(&common)?;
            cmd_ablate(&cfg, run_dir.as_deref().unwrap_or(&out), &out)
        }
        Command::Relevance {
            common,
            checkpoint,
            data,
            mode,
        } => {
            let (cfg, out) = config::resolve(&common)?;
            let mode = mode.map(RelevanceMode::from).unwrap_or(cfg.eval.relevance_mode);
            cmd_relevance(&cfg, &checkpoint, &data, mode, &out)
        }
        Command::Gradcheck { common } => {
            let (cfg, out) = config::resolve(&common)?;
            cmd_gradcheck(cfg.train.seed, &out)
        }
    }
}

/// Parses `args`, runs the command, and maps the outcome to an exit code.
/// Usage errors from argument parsing print clap's message.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ErrorKind::Usage.exit_code() } else { 0 };
            e.print().ok();
            return code;
        }
    };
    match run(cli) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
