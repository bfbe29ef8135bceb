//! Batch driver behind the `stats`, `run`, `plot` and `synth` commands.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::bias::{
    self, aggregate, append_records, failed_records, measure, read_aggregate, read_records, write_aggregate,
    write_records, Audit, BiasRecord, FittedModel, ModelSpec, RunStatus, Variant,
};
use crate::config::{ExperimentConfig, InputSource};
use crate::corpus::{read_events_file, read_labels_file, Country, Dataset};
use crate::error::{Error, Result};
use crate::locality::{coverage_report, local_histogram, write_histograms_csv, CoverageReport, Histogram, LabelTable};
use crate::neumf::{self, TrainReport};
use crate::plot;
use crate::synth::{self, SynthConfig, SyntheticCorpus};

/// Environment variable holding the worker count of `run`.
pub const WORKERS_ENV: &str = "LOCALBIAS_WORKERS";
pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const COVERAGE_FILE: &str = "coverage_report.csv";
pub const HISTOGRAM_FILE: &str = "local_histogram.csv";
pub const RUNS_DIR: &str = "runs";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut out = create(&tmp)?;
    write(&mut out)?;
    out.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(out);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<(Dataset, LabelTable)> {
    match config.input() {
        InputSource::Files { events, labels } => {
            let dataset = read_events_file(events)?;
            let labels = read_labels_file(labels)?;
            log::info!(
                "loaded {} events, {} users, {} tracks, {} labeled artists",
                dataset.event_count(),
                dataset.user_count(),
                dataset.catalog_size(),
                labels.len()
            );
            Ok((dataset, labels))
        }
        InputSource::Synthetic(s) => {
            let corpus = synth::generate(s)?;
            Ok((corpus.dataset, corpus.labels))
        }
    }
}

/// Configured countries, or every country of the dataset.
fn countries(config: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<Country>> {
    let present = dataset.countries();
    match &config.countries {
        None => Ok(present),
        Some(list) => {
            if let Some(missing) = list.iter().find(|c| !present.contains(c)) {
                return Err(Error::InvalidArgument(format!(
                    "country {missing} has no users in the dataset"
                )));
            }
            let mut list = list.clone();
            list.sort();
            list.dedup();
            Ok(list)
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatsOutput {
    pub coverage: CoverageReport,
    pub histograms: Vec<Histogram>,
    pub files: Vec<PathBuf>,
}

/// Coverage report and per-user local-proportion histograms for every
/// (country, source, policy).
pub fn cmd_stats(config: &ExperimentConfig) -> Result<StatsOutput> {
    let (dataset, labels) = load_inputs(config)?;
    let countries = countries(config, &dataset)?;
    let mut coverage = CoverageReport::default();
    let mut histograms = Vec::new();
    for &source in &config.sources {
        let mut report = coverage_report(&dataset, &labels, source);
        report.rows.retain(|r| countries.contains(&r.country));
        coverage.extend(report);
        for &policy in &config.policies {
            let mut h = local_histogram(&dataset, &labels, source, policy, config.histogram_bins)?;
            h.retain(|h| countries.contains(&h.country));
            histograms.extend(h);
        }
    }
    coverage.rows.sort_by_key(|r| (r.country, r.source));
    histograms.sort_by_key(|h| (h.country, h.source, h.policy));

    let coverage_path = config.output_dir.join(COVERAGE_FILE);
    let histogram_path = config.output_dir.join(HISTOGRAM_FILE);
    write_atomic(&coverage_path, |w| coverage.write_csv(w))?;
    write_atomic(&histogram_path, |w| write_histograms_csv(&histograms, w))?;
    Ok(StatsOutput {
        coverage,
        histograms,
        files: vec![coverage_path, histogram_path],
    })
}

/// Outcome of `cmd_run`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    /// Training jobs in the experiment (one per fit).
    pub jobs: usize,
    /// Jobs executed by this invocation.
    pub trained: usize,
    /// Jobs whose records were already complete.
    pub skipped: usize,
    pub records: usize,
    pub failed_records: usize,
    /// One message per failed fit.
    pub failures: Vec<String>,
}

impl RunSummary {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty() || self.failed_records > 0
    }
}

/// A fit plus the seeds it is reported under. Unseeded models cover every
/// seed with one fit.
#[derive(Debug, Clone)]
struct Job {
    spec: usize,
    variant: Variant,
    /// Country of a local population; `None` for the global one.
    population: Option<Country>,
    seeds: Vec<u64>,
}

impl Job {
    fn stem(&self, kind: bias::ModelKind) -> String {
        let pop = self.population.map_or("all".to_owned(), |c| c.to_string());
        format!("{kind}_{}_{pop}_s{}", self.variant, self.seeds[0])
    }
}

struct JobOutput {
    records: Vec<BiasRecord>,
    failure: Option<String>,
}

fn audit_countries(job: &Job, countries: &[Country]) -> Vec<Country> {
    match job.population {
        Some(c) => vec![c],
        None => countries.to_vec(),
    }
}

/// Reads records written so far, dropping a trailing partial line left by an
/// interrupted run.
fn read_existing_records(path: &Path) -> Result<Vec<BiasRecord>> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    if !text.ends_with('\n') {
        text.truncate(text.rfind('\n').map_or(0, |i| i + 1));
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    read_records(text.as_bytes()).map_err(|e| e.in_file(path))
}

fn flatten_toml(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_toml(&key, v, out);
            }
        }
        toml::Value::Array(items) => {
            let joined: Vec<String> = items.iter().map(|v| v.to_string()).collect();
            out.push((prefix.to_owned(), joined.join(";")));
        }
        toml::Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

fn write_manifest(dir: &Path, stem: &str, job: &Job, spec: &ModelSpec, report: Option<&TrainReport>) -> Result<()> {
    let mut rows: Vec<(String, String)> = vec![
        ("model".into(), spec.kind().to_string()),
        ("variant".into(), job.variant.to_string()),
        (
            "population".into(),
            job.population.map_or("all".into(), |c| c.to_string()),
        ),
        (
            "seeds".into(),
            job.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
        ),
    ];
    if let Some(r) = report {
        rows.push(("best_epoch".into(), r.best_epoch.to_string()));
        rows.push(("epochs_run".into(), r.history.len().to_string()));
        rows.push((
            "best_mrr_at_10".into(),
            r.best_score.map(|s| s.to_string()).unwrap_or_default(),
        ));
        rows.push(("stopped_early".into(), r.stopped_early.to_string()));
    }
    let config = match spec {
        ModelSpec::ItemKnn(c) => toml::Value::try_from(c),
        ModelSpec::NeuMf(c) => toml::Value::try_from(neumf::NeuMfConfig {
            seed: job.seeds[0],
            ..c.clone()
        }),
    }
    .map_err(|e| Error::Config(e.to_string()))?;
    flatten_toml("config", &config, &mut rows);

    write_atomic(&dir.join(format!("{stem}_manifest.csv")), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["key", "value"])?;
        for (k, v) in &rows {
            csv.write_record([k, v])?;
        }
        csv.flush().map_err(|e| Error::io(dir, e))
    })?;
    if let Some(r) = report {
        write_atomic(&dir.join(format!("{stem}_validation.csv")), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["seed", "epoch", "mrr_at_10", "mean_loss"])?;
            for e in &r.history {
                csv.write_record([
                    job.seeds[0].to_string(),
                    e.epoch.to_string(),
                    e.mrr_at_10.map(|m| m.to_string()).unwrap_or_default(),
                    e.mean_loss.to_string(),
                ])?;
            }
            csv.flush().map_err(|e| Error::io(dir, e))
        })?;
    }
    Ok(())
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    specs: Vec<ModelSpec>,
    countries: Vec<Country>,
    populations: BTreeMap<Option<Country>, Dataset>,
    labels: &'a LabelTable,
    runs_dir: PathBuf,
}

impl RunContext<'_> {
    fn execute(&self, job: &Job) -> JobOutput {
        let spec = &self.specs[job.spec];
        let kind = spec.kind();
        let population = &self.populations[&job.population];
        let countries = audit_countries(job, &self.countries);
        let audit = Audit {
            dataset_tag: &self.config.dataset,
            variant: job.variant,
            countries: &countries,
            sources: &self.config.sources,
            policies: &self.config.policies,
            grid: &self.config.grid,
        };
        let stem = job.stem(kind);
        let first = job.seeds[0];
        log::info!("fitting {stem}");
        let fit = match bias::fit(population, spec, first, &self.config.protocol) {
            Ok(f) => f,
            Err(e) => {
                let message = format!("{stem}: {e}");
                log::warn!("{message}");
                let records = job
                    .seeds
                    .iter()
                    .flat_map(|&s| failed_records(kind, s, &audit))
                    .collect();
                return JobOutput {
                    records,
                    failure: Some(message),
                };
            }
        };
        let restrict = self.config.protocol.restrict_to_validation;
        let measured = measure(population, self.labels, &fit, kind, first, &audit, restrict);
        let mut records = Vec::with_capacity(measured.len() * job.seeds.len());
        for &seed in &job.seeds {
            records.extend(measured.iter().cloned().map(|r| BiasRecord { seed, ..r }));
        }
        let mut failure = None;
        if let Err(e) = write_manifest(&self.runs_dir, &stem, job, spec, fit.report.as_ref()) {
            failure = Some(format!("{stem}: manifest: {e}"));
        }
        if let FittedModel::NeuMf(model) = &fit.model {
            let path = self.runs_dir.join(format!("{stem}_params.bin"));
            let config = match spec {
                ModelSpec::NeuMf(c) => neumf::NeuMfConfig {
                    seed: first,
                    ..c.clone()
                },
                ModelSpec::ItemKnn(_) => unreachable!("NeuMF fit from a NeuMF spec"),
            };
            let written = create(&path).and_then(|w| neumf::write_params(model.params(), &config, w));
            if let Err(e) = written {
                failure = Some(format!("{stem}: params: {e}"));
            }
        }
        JobOutput { records, failure }
    }
}

fn plan_jobs(config: &ExperimentConfig, specs: &[ModelSpec], countries: &[Country]) -> Vec<Job> {
    let seeds = config.seeds();
    let mut jobs = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        for &variant in &config.variants {
            let populations: Vec<Option<Country>> = match variant {
                Variant::Global => vec![None],
                Variant::Local => countries.iter().copied().map(Some).collect(),
            };
            for population in populations {
                if spec.is_seeded() || config.protocol.restrict_to_validation {
                    for &seed in &seeds {
                        jobs.push(Job {
                            spec: i,
                            variant,
                            population,
                            seeds: vec![seed],
                        });
                    }
                } else {
                    jobs.push(Job {
                        spec: i,
                        variant,
                        population,
                        seeds: seeds.clone(),
                    });
                }
            }
        }
    }
    jobs
}

type RecordId = (bias::RecordKey, u64);

fn expected_ids(job: &Job, kind: bias::ModelKind, config: &ExperimentConfig, countries: &[Country]) -> Vec<RecordId> {
    let audit_countries = audit_countries(job, countries);
    let audit = Audit {
        dataset_tag: &config.dataset,
        variant: job.variant,
        countries: &audit_countries,
        sources: &config.sources,
        policies: &config.policies,
        grid: &config.grid,
    };
    job.seeds
        .iter()
        .flat_map(|&s| failed_records(kind, s, &audit))
        .map(|r| (r.key(), r.seed))
        .collect()
}

/// Number of workers from [`WORKERS_ENV`], else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs the whole experiment matrix with `workers` parallel jobs.
///
/// Records are appended to `records.csv` as jobs finish; jobs whose records
/// are all present already are skipped. At the end the file is rewritten in
/// canonical order and `aggregate.csv` is regenerated, so the final files do
/// not depend on scheduling or on interruptions.
pub fn cmd_run(config: &ExperimentConfig, workers: usize) -> Result<RunSummary> {
    let (dataset, labels) = load_inputs(config)?;
    let countries = countries(config, &dataset)?;
    let specs = config.models.specs();
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let runs_dir = config.output_dir.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;

    let records_path = config.output_dir.join(RECORDS_FILE);
    let existing = read_existing_records(&records_path)?;
    let done: HashSet<RecordId> = existing.iter().map(|r| (r.key(), r.seed)).collect();

    let jobs = plan_jobs(config, &specs, &countries);
    let mut summary = RunSummary {
        jobs: jobs.len(),
        ..RunSummary::default()
    };
    let pending: Vec<Job> = jobs
        .into_iter()
        .filter(|job| {
            let complete = expected_ids(job, specs[job.spec].kind(), config, &countries)
                .iter()
                .all(|id| done.contains(id));
            summary.skipped += usize::from(complete);
            !complete
        })
        .collect();
    summary.trained = pending.len();
    log::info!("{} jobs, {} already complete", summary.jobs, summary.skipped);

    let mut populations = BTreeMap::new();
    for job in &pending {
        populations
            .entry(job.population)
            .or_insert_with(|| match job.population {
                None => dataset.clone(),
                Some(c) => bias::population(&dataset, Variant::Local, c),
            });
    }
    let ctx = RunContext {
        config,
        specs,
        countries,
        populations,
        labels: &labels,
        runs_dir,
    };

    // Rewrite what was read so a dropped partial line cannot corrupt appends.
    write_atomic(&records_path, |w| write_records(&existing, w))?;
    let mut sink = OpenOptions::new()
        .append(true)
        .open(&records_path)
        .map_err(|e| Error::io(&records_path, e))?;

    let mut fresh = Vec::new();
    let next = AtomicUsize::new(0);
    let workers = workers.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<JobOutput>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (ctx, pending, next) = (&ctx, &pending, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = pending.get(i) else { break };
                if tx.send(ctx.execute(job)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // The receiving thread is the only writer of the records file.
        for output in rx {
            let mut buf = Vec::new();
            append_records(&output.records, &mut buf)?;
            sink.write_all(&buf).map_err(|e| Error::io(&records_path, e))?;
            sink.flush().map_err(|e| Error::io(&records_path, e))?;
            if let Some(f) = output.failure {
                summary.failures.push(f);
            }
            fresh.extend(output.records);
        }
        Ok(())
    })?;
    drop(sink);

    // Later records win over earlier ones with the same (key, seed).
    let mut merged: BTreeMap<RecordId, BiasRecord> = BTreeMap::new();
    for r in existing.into_iter().chain(fresh) {
        merged.insert((r.key(), r.seed), r);
    }
    let mut all: Vec<BiasRecord> = merged.into_values().collect();
    all.sort_by(BiasRecord::canonical_cmp);
    write_atomic(&records_path, |w| write_records(&all, w))?;
    let agg = aggregate(&all);
    write_atomic(&config.output_dir.join(AGGREGATE_FILE), |w| write_aggregate(&agg, w))?;

    summary.records = all.len();
    summary.failed_records = all.iter().filter(|r| r.status == RunStatus::Failed).count();
    summary.failures.sort();
    Ok(summary)
}

/// Renders every figure of an aggregate CSV into `out_dir`.
pub fn cmd_plot(aggregate_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let file = File::open(aggregate_path).map_err(|e| Error::io(aggregate_path, e))?;
    let rows = read_aggregate(std::io::BufReader::new(file)).map_err(|e| e.in_file(aggregate_path))?;
    let charts = plot::render(&rows)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    charts
        .into_iter()
        .map(|chart| {
            let path = out_dir.join(&chart.file_name);
            write_atomic(&path, |w| {
                w.write_all(chart.svg.as_bytes()).map_err(|e| Error::io(&path, e))
            })?;
            Ok(path)
        })
        .collect()
}

/// Generates a synthetic corpus and writes its CSVs into `out_dir`.
pub fn cmd_synth(config: &SynthConfig, out_dir: &Path) -> Result<SyntheticCorpus> {
    let corpus = synth::generate(config)?;
    corpus.write_dir(out_dir)?;
    Ok(corpus)
}
