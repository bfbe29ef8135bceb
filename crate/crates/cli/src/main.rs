//! `localbias`: audit recommenders for bias toward or against local music.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 some jobs
//! failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use localbias::bias::ModelKind;
use localbias::config::ExperimentConfig;
use localbias::runner::{self, WORKERS_ENV};
use localbias::synth::SynthConfig;
use localbias::{Country, ErrorKind};

#[derive(Parser, Debug)]
#[command(
    name = "localbias",
    version,
    about = "Local-music bias audit for ItemKNN and NeuMF recommenders"
)]
struct Cli {
    /// Increase log verbosity (-v debug, -vv trace). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write label coverage and local-proportion histograms.
    Stats {
        /// Experiment config (TOML).
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Only report this country.
        #[arg(long)]
        country: Option<Country>,
    },
    /// Train, sweep K and aggregate bias records.
    Run {
        /// Experiment config (TOML).
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Only run jobs for this country.
        #[arg(long)]
        country: Option<Country>,
        /// Only run this model.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Only run this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel training jobs (default: available cores).
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Render bias-vs-K charts from an aggregate CSV.
    Plot {
        /// Experiment config; its output directory holds `aggregate.csv`.
        #[arg(long, value_name = "PATH", required_unless_present = "aggregate")]
        config: Option<PathBuf>,
        /// Aggregate CSV to plot instead of the config's.
        #[arg(long, value_name = "PATH")]
        aggregate: Option<PathBuf>,
        /// Directory for the SVG files (default: `plots` next to the aggregate).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus (events, labels, ground truth).
    Synth {
        /// Synthetic corpus TOML, or an experiment config with a [synth] table.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Override the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// An error carrying the exit code it should produce.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

fn usage(e: impl Into<anyhow::Error>) -> Exit {
    Exit(1, e.into())
}

fn classify(e: localbias::Error) -> Exit {
    let code = match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
    };
    // Core errors already name the offending path; skip the source chain.
    Exit(code, anyhow::anyhow!("{e}"))
}

// Any failure to read the config is a usage error, whatever its cause.
fn load_config(path: &Path) -> Result<ExperimentConfig, Exit> {
    ExperimentConfig::load(path).map_err(|e| usage(anyhow::anyhow!("config {e}")))
}

fn load_synth_config(path: &Path) -> Result<SynthConfig, Exit> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("{} is not valid TOML", path.display()))
        .map_err(usage)?;
    if table.contains_key("synth") {
        let config = load_config(path)?;
        return config
            .synth
            .with_context(|| format!("{} has no [synth] table", path.display()))
            .map_err(usage);
    }
    let config: SynthConfig = toml::from_str(&text)
        .with_context(|| format!("invalid synthetic corpus config {}", path.display()))
        .map_err(usage)?;
    config.validate().map_err(classify)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<u8, Exit> {
    match cli.command {
        Command::Stats { config, country } => {
            let mut config = load_config(&config)?;
            config.restrict(country, None, None);
            let out = runner::cmd_stats(&config).map_err(classify)?;
            for f in &out.files {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Run {
            config,
            country,
            model,
            seed,
            workers,
        } => {
            let mut config = load_config(&config)?;
            config.restrict(country, model, seed);
            let workers = workers.filter(|&w| w > 0).unwrap_or_else(runner::default_workers);
            let summary = runner::cmd_run(&config, workers).map_err(classify)?;
            println!(
                "{} jobs: {} run, {} already complete; {} records ({} failed)",
                summary.jobs, summary.trained, summary.skipped, summary.records, summary.failed_records
            );
            for f in &summary.failures {
                eprintln!("failed: {f}");
            }
            println!("{}", config.output_dir.join(runner::RECORDS_FILE).display());
            println!("{}", config.output_dir.join(runner::AGGREGATE_FILE).display());
            Ok(if summary.is_partial() { 3 } else { 0 })
        }
        Command::Plot { config, aggregate, out } => {
            let aggregate = match (aggregate, config) {
                (Some(a), _) => a,
                (None, Some(c)) => load_config(&c)?.output_dir.join(runner::AGGREGATE_FILE),
                (None, None) => unreachable!("clap requires one of --config/--aggregate"),
            };
            let out = out.unwrap_or_else(|| aggregate.parent().unwrap_or(Path::new(".")).join("plots"));
            for f in runner::cmd_plot(&aggregate, &out).map_err(classify)? {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Synth { config, seed, out } => {
            let mut synth = match config {
                Some(path) => load_synth_config(&path)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                synth.seed = s;
            }
            let corpus = runner::cmd_synth(&synth, &out).map_err(classify)?;
            println!(
                "{}: {} events, {} users, {} tracks",
                out.display(),
                corpus.dataset.event_count(),
                corpus.dataset.user_count(),
                corpus.dataset.catalog_size()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
