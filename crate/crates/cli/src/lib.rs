//! Command-line driver: `ingest` raw files into a dataset, `run` the model
//! grid, `report` leaderboards and charts.

pub mod chart;
pub mod config;
pub mod report;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use popcast_core::ingest::{build_dataset, Dataset};

use crate::config::{parse_models, RunConfig};
use crate::report::Format;

#[derive(Debug, Parser)]
#[command(name = "popcast", version, about = "Annual population forecasting benchmark")]
pub struct Cli {
    /// Config file of `section.key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed for every trained model
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (ingest) or directory (run, report)
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge FRED and Census files into a dataset JSON
    Ingest {
        #[arg(long, value_name = "DIR")]
        fred_dir: PathBuf,
        #[arg(long, value_name = "FILE")]
        census_file: PathBuf,
    },
    /// Fit and forecast every (series, model) cell
    Run {
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
        /// Comma-separated subset of lr, arima, rnn, patchtf
        #[arg(long)]
        models: Option<String>,
        /// Train through 2013 and evaluate on 2014-2016
        #[arg(long)]
        validation: bool,
        /// Extra `section.key=value` overrides, applied after the config file
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Leaderboards and charts from a results file
    Report {
        #[arg(long, value_name = "FILE")]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        format: Format,
    },
}

impl Cli {
    /// Flag combinations clap cannot express: `ingest` needs `--out`.
    pub fn check(&self) -> Result<(), clap::Error> {
        if matches!(self.command, Command::Ingest { .. }) && self.out.is_none() {
            return Err(Cli::command().error(
                ErrorKind::MissingRequiredArgument,
                "ingest requires --out <PATH> for the dataset file",
            ));
        }
        Ok(())
    }
}

/// Writes the dataset JSON to `out` and returns the dataset.
pub fn cmd_ingest(fred_dir: &Path, census_file: &Path, out: &Path) -> Result<Dataset> {
    let dataset = build_dataset(fred_dir, census_file)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(out, dataset.to_json()).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(dataset)
}

/// Resolves defaults, then the config file, then flags.
pub fn resolve_run_config(
    config_file: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    dataset: Option<&Path>,
    models: Option<&str>,
    validation: bool,
    overrides: &[String],
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config_file {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("config {}", path.display()))?;
    }
    let mut pairs = Vec::new();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set '{o}': expected KEY=VALUE"))?;
        pairs.push((k.trim(), v.trim()));
    }
    cfg.apply(pairs)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out = out.to_path_buf();
    }
    if let Some(d) = dataset {
        cfg.dataset = d.to_path_buf();
    }
    if let Some(m) = models {
        cfg.models = parse_models(m)?;
    }
    if validation {
        cfg.validation = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    cli.check()?;
    match cli.command {
        Command::Ingest { fred_dir, census_file } => {
            let out = cli.out.expect("checked");
            let dataset = cmd_ingest(&fred_dir, &census_file, &out)?;
            for w in &dataset.warnings {
                eprintln!("warning: {w}");
            }
            for (key, s) in &dataset.series {
                println!("{key}: {} points ({}-{})", s.len(), s.start_year(), s.end_year());
            }
            println!("{} series written to {}", dataset.len(), out.display());
        }
        Command::Run {
            dataset,
            models,
            validation,
            overrides,
        } => {
            let cfg = resolve_run_config(
                cli.config.as_deref(),
                cli.seed,
                cli.out.as_deref(),
                dataset.as_deref(),
                models.as_deref(),
                validation,
                &overrides,
            )?;
            let (results, path) = run::cmd_run(&cfg)?;
            for f in &results.failures {
                eprintln!("failed {} {}: {}", f.key, f.model, f.error);
            }
            println!(
                "{} results, {} failures written to {}",
                results.results.len(),
                results.failures.len(),
                path.display()
            );
        }
        Command::Report { results, format } => {
            let out = match cli.out {
                Some(dir) => dir,
                None => results.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            };
            let report = report::cmd_report(&results, format, &out)?;
            print!("{}", report.summary_text());
            println!("{} files written to {}", report.written.len(), out.display());
        }
    }
    Ok(())
}
