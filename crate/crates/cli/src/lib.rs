//! Command-line driver for `multireg`: scene synthesis, algorithm runs,
//! evaluation and bound benches, all through plain-text files.

pub mod commands;
pub mod config;
pub mod record;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::ExperimentConfig;
pub use record::ResultRecord;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(multireg::Error),
    #[error("algorithm failed: {0}")]
    Algorithm(String),
}

impl CliError {
    /// 1 for algorithm failures, 2 for everything a user must fix.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Algorithm(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "multireg",
    version,
    about = "Multi-model rigid registration experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// em, sransac, tlinkage or naive-horn.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_override)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic scene.
    Synth(CommonArgs),
    /// Run an algorithm on a scene and evaluate it.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Scene file; overrides `scene.file`.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Score a prediction (result or clustering file) against a scene.
    Eval {
        pred: PathBuf,
        scene: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a theory bench.
    Bench(CommonArgs),
}

pub(crate) fn read_file(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.clone(),
        msg: e.to_string(),
    })
}

pub(crate) fn write_file(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.clone(),
        msg: e.to_string(),
    })
}

fn load_config(
    common: &CommonArgs,
    extra: &[(String, String)],
) -> Result<ExperimentConfig, CliError> {
    let text = common.config.as_ref().map(read_file).transpose()?;
    let mut overrides = common.set.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(alg) = &common.algorithm {
        overrides.push(("algorithm".into(), alg.clone()));
    }
    ExperimentConfig::build(text.as_deref(), &overrides)
}

/// Parses `args` (program name first) and executes the command, writing
/// human-readable output to `out`.
pub fn run_with_args<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::Synth(common) => {
            let cfg = load_config(&common, &[])?;
            commands::synth(&cfg, common.out.as_ref(), out)
        }
        Command::Run { common, scene } => {
            let extra: Vec<(String, String)> = scene
                .iter()
                .map(|p| ("scene.file".to_string(), p.display().to_string()))
                .collect();
            let cfg = load_config(&common, &extra)?;
            commands::run(&cfg, common.out.as_ref(), out)
        }
        Command::Eval {
            pred,
            scene,
            common,
        } => commands::eval(&pred, &scene, common.out.as_ref(), out),
        Command::Bench(common) => {
            let cfg = load_config(&common, &[])?;
            commands::bench(&cfg, common.out.as_ref(), out)
        }
    }
}

/// Entry point shared by the binary: prints errors to stderr and maps them
/// to exit codes. `--help` and `--version` exit 0.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&args) {
        let code = if e.use_stderr() { 2 } else { 0 };
        let _ = e.print();
        return code;
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_with_args(args, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
