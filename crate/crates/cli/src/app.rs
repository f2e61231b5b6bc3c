//! Command-line surface.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ingest::load_stores;
use crate::output::{kind_name, write_all};
use crate::report::{run_firm_level, run_local, run_state, FileKind, OutputFile};

#[derive(Debug, Parser)]
#[command(name = "mktsens", version, about = "Sensitivity of merger screening to market definition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Store CSV file.
    #[arg(long)]
    pub stores: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Only write outputs of this type.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Statewide lattice, Shapley values and power indices over formats.
    State(RunArgs),
    /// Power index of each listed competitor chain.
    Firm(RunArgs),
    /// Circle markets around the merging parties' stores.
    Local(RunArgs),
    /// Statewide annotated Hasse diagram only (DOT unless --format json).
    Hasse(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Dot,
    Json,
    Csv,
}

impl OutputFormat {
    fn kind(self) -> FileKind {
        match self {
            OutputFormat::Dot => FileKind::Dot,
            OutputFormat::Json => FileKind::Json,
            OutputFormat::Csv => FileKind::Csv,
        }
    }
}

fn select(files: Vec<OutputFile>, format: Option<OutputFormat>, command: &str) -> Result<Vec<OutputFile>> {
    let Some(format) = format else { return Ok(files) };
    let kind = format.kind();
    let chosen: Vec<OutputFile> = files.into_iter().filter(|f| f.kind == kind).collect();
    if chosen.is_empty() {
        return Err(CliError::Usage(format!("`{command}` produces no {} output", kind_name(kind))));
    }
    Ok(chosen)
}

/// Runs one command; returns the human-readable summary lines.
pub fn execute(cli: &Cli) -> Result<Vec<String>> {
    let (name, args) = match &cli.command {
        Command::State(a) => ("state", a),
        Command::Firm(a) => ("firm", a),
        Command::Local(a) => ("local", a),
        Command::Hasse(a) => ("hasse", a),
    };
    let config = RunConfig::load(&args.config)?;
    let loaded = load_stores(&args.stores, &config)?;
    let mut lines = vec![loaded.summary()];
    let u = &loaded.universe;

    let files = match &cli.command {
        Command::State(_) => {
            let report = run_state(&config, u)?;
            lines.push(report.summary());
            select(report.files(), args.format, name)?
        }
        Command::Firm(_) => {
            let report = run_firm_level(&config, u)?;
            lines.push(report.summary());
            select(report.files(), args.format, name)?
        }
        Command::Local(_) => {
            let report = run_local(&config, u)?;
            lines.push(report.summary());
            select(report.files(), args.format, name)?
        }
        Command::Hasse(_) => {
            let kind = match args.format.unwrap_or(OutputFormat::Dot) {
                OutputFormat::Csv => return Err(CliError::Usage("hasse supports --format dot or json".into())),
                f => f.kind(),
            };
            let report = run_state(&config, u)?;
            lines.push(report.summary());
            vec![report.hasse_file(kind).expect("dot and json diagrams exist")]
        }
    };
    for path in write_all(&args.out, &files)? {
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(lines)
}

/// Applies `MKTSENS_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MKTSENS_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("MKTSENS_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure worker pool: {e}")))
}
