//! The `stance` command-line tool: classification runs, validation statistics
//! and the local annotation service.

pub mod annotate;
mod cache;
mod classify;
mod evaluate;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stance_core::config::Config;
use stance_core::io::{load_documents, DocFormat};
use stance_core::{Dataset, LabelSet};

#[derive(Debug, Parser)]
#[command(name = "stance", version, about = "Stance and topic classification with entailment models")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "STANCE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `run.parallelism` from the configuration.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a document file and write predictions, a manifest and a report.
    Classify(classify::ClassifyArgs),
    /// Compare predictions against gold labels.
    Validate(evaluate::ValidateArgs),
    /// Number of documents to hand-label for a target margin of error.
    SampleSize(evaluate::SampleSizeArgs),
    /// Classify with several synonymous hypothesis sets and compare the results.
    Sensitivity(evaluate::SensitivityArgs),
    /// Local annotation service.
    #[command(subcommand)]
    Annotate(annotate::AnnotateCommand),
    /// Inspect or clear the response cache.
    #[command(subcommand)]
    Cache(cache::CacheCommand),
}

/// Where the label set comes from: a name in the configuration or an inline list.
#[derive(Debug, Clone, Args)]
pub struct LabelSetArgs {
    /// Label set name from the configuration.
    #[arg(long = "label-set")]
    pub label_set: Option<String>,
    /// Comma-separated labels, used instead of a configured label set.
    #[arg(long, value_delimiter = ',', conflicts_with = "label_set")]
    pub labels: Option<Vec<String>>,
}

pub(crate) struct Session {
    pub config: Option<Config>,
    pub format: OutputFormat,
}

impl Session {
    pub fn config(&self) -> Result<&Config> {
        self.config
            .as_ref()
            .context("this command needs a configuration file (pass --config)")
    }

    pub fn label_set(&self, args: &LabelSetArgs) -> Result<LabelSet> {
        if let Some(labels) = &args.labels {
            return Ok(LabelSet::new("labels", labels.iter().map(|l| l.trim()))?);
        }
        let config = self.config()?;
        match &args.label_set {
            Some(name) => Ok(config.label_set(name)?.clone()),
            None => match config.label_sets.as_slice() {
                [only] => Ok(only.clone()),
                [] => bail!("the configuration defines no label sets; pass --labels"),
                _ => bail!("the configuration defines several label sets; pick one with --label-set"),
            },
        }
    }

    /// Prints `value` as JSON, or the table rendering.
    pub fn emit<T: Serialize>(&self, out: &mut dyn Write, value: &T, table: impl FnOnce() -> String) -> Result<()> {
        match self.format {
            OutputFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(value)?)?,
            OutputFormat::Table => write!(out, "{}", table())?,
        }
        Ok(())
    }
}

pub(crate) fn load_dataset(path: &Path) -> Result<Dataset> {
    let format = DocFormat::from_path(path)?;
    load_documents(path, format).with_context(|| format!("cannot load documents from {}", path.display()))
}

/// Runs one parsed command line, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Some(Config::load(path)?),
        None => None,
    };
    if let Some(c) = config.as_mut() {
        if let Some(seed) = cli.seed {
            c.run.seed = seed;
        }
        if let Some(p) = cli.parallelism {
            if p == 0 {
                bail!("--parallelism must be at least 1");
            }
            c.run.parallelism = p;
        }
    }
    let ctx = Session {
        config,
        format: cli.format,
    };
    match cli.command {
        Command::Classify(args) => classify::run(&ctx, args, out),
        Command::Validate(args) => evaluate::validate(&ctx, args, out),
        Command::SampleSize(args) => evaluate::sample_size(&ctx, args, out),
        Command::Sensitivity(args) => evaluate::sensitivity(&ctx, args, out),
        Command::Annotate(cmd) => annotate::run(&ctx, cli.seed, cmd, out),
        Command::Cache(cmd) => cache::run(&ctx, cmd, out),
    }
}

/// Error report in the requested format.
pub fn render_error(err: &anyhow::Error, format: OutputFormat) -> String {
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    match format {
        OutputFormat::Json => serde_json::json!({ "error": chain[0], "causes": &chain[1..] }).to_string(),
        OutputFormat::Table => format!("error: {err:#}"),
    }
}
