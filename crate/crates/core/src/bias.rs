//! Local-music bias of recommendation lists, K sweeps and seed aggregation.
//!
//! For a user `u` with listening share `L(u)` and a list whose local share is
//! `L_rec(u)`, the user's term is `L_rec(u) - L(u)`. A country's bias is the
//! mean term over its countable users, so it lies in `[-1, 1]`; positive
//! values mean local music is over-recommended.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Country, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, Recommender, UserQuery};
use crate::itemknn::{self, ItemKnnConfig};
use crate::locality::{user_local_counts, LabelSource, LabelTable, LocalCounts, TrackCountries, UnlabeledPolicy};
use crate::neumf::{self, NeuMfConfig, TrainReport};

pub const RECORDS_HEADER: [&str; 11] = [
    "dataset",
    "country",
    "model",
    "variant",
    "source",
    "policy",
    "K",
    "seed",
    "bias",
    "users_counted",
    "status",
];
pub const AGGREGATE_HEADER: [&str; 10] = [
    "dataset", "country", "model", "variant", "source", "policy", "K", "mean", "std", "n_runs",
];
pub const DEFAULT_RUNS: u64 = 20;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

string_enum!(ModelKind { ItemKnn => "itemknn", NeuMf => "neumf" });
string_enum!(
    /// Training population: all users, or only users of the audited country.
    Variant { Global => "global", Local => "local" }
);
string_enum!(RunStatus { Ok => "ok", Failed => "failed" });

/// A recommender family with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    ItemKnn(ItemKnnConfig),
    NeuMf(NeuMfConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::ItemKnn(_) => ModelKind::ItemKnn,
            ModelSpec::NeuMf(_) => ModelKind::NeuMf,
        }
    }

    /// Whether different seeds can produce different models.
    pub fn is_seeded(&self) -> bool {
        matches!(self, ModelSpec::NeuMf(_))
    }
}

/// K values of a sweep, strictly increasing and positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SweepGrid(Vec<usize>);

impl SweepGrid {
    pub fn new(values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("sweep grid is empty".into()));
        }
        if values[0] == 0 || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "sweep grid must be strictly increasing positive integers, got {values:?}"
            )));
        }
        Ok(SweepGrid(values))
    }

    /// `start, start + step, ..` up to and including `end`.
    pub fn range(start: usize, end: usize, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidArgument("sweep step must be positive".into()));
        }
        Self::new((start..=end).step_by(step).collect())
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("grid is non-empty")
    }
}

impl Default for SweepGrid {
    /// K = 10, 15, .., 100.
    fn default() -> Self {
        SweepGrid::range(10, 100, 5).expect("valid default grid")
    }
}

impl TryFrom<Vec<usize>> for SweepGrid {
    type Error = Error;

    fn try_from(values: Vec<usize>) -> Result<Self> {
        SweepGrid::new(values)
    }
}

impl From<SweepGrid> for Vec<usize> {
    fn from(grid: SweepGrid) -> Self {
        grid.0
    }
}

/// Seeds `0..n`.
pub fn default_seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

/// One measured bias (or a failed attempt at one).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRecord {
    pub dataset: String,
    pub country: Country,
    pub model: ModelKind,
    pub variant: Variant,
    pub source: LabelSource,
    pub policy: UnlabeledPolicy,
    pub k: usize,
    pub seed: u64,
    /// Absent when `status` is failed.
    pub bias: Option<f64>,
    pub users_counted: usize,
    pub status: RunStatus,
}

/// Everything identifying a record except the seed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub dataset: String,
    pub country: Country,
    pub model: ModelKind,
    pub variant: Variant,
    pub source: LabelSource,
    pub policy: UnlabeledPolicy,
    pub k: usize,
}

impl BiasRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            dataset: self.dataset.clone(),
            country: self.country,
            model: self.model,
            variant: self.variant,
            source: self.source,
            policy: self.policy,
            k: self.k,
        }
    }

    /// Canonical file order: key fields, then seed.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key()).then(self.seed.cmp(&other.seed))
    }

    fn to_row(&self) -> [String; 11] {
        [
            self.dataset.clone(),
            self.country.to_string(),
            self.model.to_string(),
            self.variant.to_string(),
            self.source.to_string(),
            self.policy.to_string(),
            self.k.to_string(),
            self.seed.to_string(),
            self.bias.map(|b| b.to_string()).unwrap_or_default(),
            self.users_counted.to_string(),
            self.status.to_string(),
        ]
    }
}

fn parse_key(fields: &[&str]) -> Result<RecordKey> {
    if fields.len() < 7 {
        return Err(Error::InvalidArgument(format!(
            "expected at least 7 fields, got {}",
            fields.len()
        )));
    }
    Ok(RecordKey {
        dataset: fields[0].to_owned(),
        country: fields[1].parse()?,
        model: fields[2].parse()?,
        variant: fields[3].parse()?,
        source: fields[4].parse()?,
        policy: fields[5].parse()?,
        k: parse_num(fields[6], "K")?,
    })
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad {what} value {s:?}")))
}

fn malformed(line: Option<u64>, e: Error) -> Error {
    Error::MalformedRow {
        line: line.unwrap_or(0),
        message: e.to_string(),
    }
}

pub fn write_records<W: Write>(records: &[BiasRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

/// Appends rows without a header.
pub fn append_records<W: Write>(records: &[BiasRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<BiasRecord>> {
    let mut rdr = crate::corpus::csv_reader(reader);
    crate::corpus::check_header(rdr.headers()?, &RECORDS_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line());
        let fields: Vec<&str> = row.iter().collect();
        if fields.len() != RECORDS_HEADER.len() {
            return Err(malformed(
                line,
                Error::InvalidArgument(format!(
                    "expected {} fields, got {}",
                    RECORDS_HEADER.len(),
                    fields.len()
                )),
            ));
        }
        let parse = || -> Result<BiasRecord> {
            let key = parse_key(&fields)?;
            let bias = match fields[8] {
                "" => None,
                b => Some(parse_num::<f64>(b, "bias")?),
            };
            Ok(BiasRecord {
                dataset: key.dataset,
                country: key.country,
                model: key.model,
                variant: key.variant,
                source: key.source,
                policy: key.policy,
                k: key.k,
                seed: parse_num(fields[7], "seed")?,
                bias,
                users_counted: parse_num(fields[9], "users_counted")?,
                status: fields[10].parse()?,
            })
        };
        out.push(parse().map_err(|e| malformed(line, e))?);
    }
    Ok(out)
}

/// Bias of one country at one K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub bias: f64,
    pub users_counted: usize,
    /// Counted users whose list was shorter than K.
    pub short_lists: usize,
}

/// `L_rec(u) - L(u)` from tallies; `None` when either share is undefined.
pub fn bias_term(listened: LocalCounts, recommended: LocalCounts, policy: UnlabeledPolicy) -> Option<f64> {
    let l_rec = recommended.proportion(policy)?;
    let l = listened.proportion(policy)?;
    Some(l_rec - l)
}

/// `L_rec(u) - L(u)` for `user` of `dataset` given a list of track indices.
/// `None` when `L(u)` or `L_rec(u)` is undefined under `policy`.
pub fn user_bias_term(
    user: u32,
    recommended: &[u32],
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> Result<Option<f64>> {
    if user as usize >= dataset.user_count() {
        return Err(Error::InvalidArgument(format!("user index {user} out of range")));
    }
    if recommended.is_empty() {
        return Ok(None);
    }
    let tracks = TrackCountries::resolve(dataset, labels, source);
    let country = dataset.user_country(user);
    let listened = tracks.count(country, dataset.user_streams(user));
    Ok(bias_term(listened, tracks.count(country, recommended), policy))
}

/// Per-user recommendation lists of one fitted model, computed once at the
/// largest K and reused by prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationLists {
    pub k_max: usize,
    pub lists: Vec<(u32, Vec<u32>)>,
}

/// Queries `model` once per user in `users` for `k_max` tracks. Users are
/// dataset indices; a user is queried by matrix row when the model was fitted
/// on it and always with their full distinct-track profile.
pub fn recommend_lists<R: Recommender + ?Sized>(
    model: &R,
    dataset: &Dataset,
    users: &[u32],
    k_max: usize,
) -> Result<RecommendationLists> {
    let fitted = model.fitted_on();
    let query = |u: u32| -> Result<(u32, Vec<u32>)> {
        let profile = dataset.user_tracks(u);
        let row = fitted.and_then(|m| m.row_of_user(u));
        Ok((u, model.recommend(UserQuery { row, profile: &profile }, k_max)?))
    };
    let lists = users.iter().map(|&u| query(u)).collect::<Result<Vec<_>>>()?;
    Ok(RecommendationLists { k_max, lists })
}

/// Bias at `k` from the first `k` entries of each list. Users with an
/// undefined term (or an empty list) are skipped.
pub fn bias_from_lists(
    lists: &RecommendationLists,
    k: usize,
    dataset: &Dataset,
    tracks: &TrackCountries,
    listened: &[LocalCounts],
    policy: UnlabeledPolicy,
) -> Result<Measurement> {
    if k == 0 || k > lists.k_max {
        return Err(Error::InvalidArgument(format!("K={k} outside 1..={}", lists.k_max)));
    }
    let mut total = 0.0;
    let mut counted = 0;
    let mut short = 0;
    for (u, list) in &lists.lists {
        let prefix = &list[..k.min(list.len())];
        if prefix.is_empty() {
            continue;
        }
        let country = dataset.user_country(*u);
        let Some(term) = bias_term(listened[*u as usize], tracks.count(country, prefix), policy) else {
            continue;
        };
        total += term;
        counted += 1;
        short += usize::from(prefix.len() < k);
    }
    if counted == 0 {
        return Err(Error::InvalidArgument("no countable users".into()));
    }
    Ok(Measurement {
        bias: total / counted as f64,
        users_counted: counted,
        short_lists: short,
    })
}

/// Mean bias term over `users` for lists of length `k` from `model`.
pub fn dataset_bias<R: Recommender + ?Sized>(
    users: &[u32],
    model: &R,
    k: usize,
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> Result<Measurement> {
    let lists = recommend_lists(model, dataset, users, k)?;
    let tracks = TrackCountries::resolve(dataset, labels, source);
    let listened = user_local_counts(dataset, &tracks);
    bias_from_lists(&lists, k, dataset, &tracks, &listened, policy)
}

/// Options shared by every fit in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub validation_fraction: f64,
    /// Measure only the validation users of each seed's split.
    pub restrict_to_validation: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            restrict_to_validation: false,
        }
    }
}

pub enum FittedModel {
    ItemKnn(itemknn::ItemKnnModel),
    NeuMf(neumf::NeuMfModel),
}

impl FittedModel {
    pub fn as_recommender(&self) -> &dyn Recommender {
        match self {
            FittedModel::ItemKnn(m) => m,
            FittedModel::NeuMf(m) => m,
        }
    }
}

/// A model fitted on one population for one seed.
pub struct Fit {
    pub model: FittedModel,
    /// Users of the population masked from training (dataset indices).
    pub validation_users: Vec<u32>,
    pub report: Option<TrainReport>,
}

const HOLD_OUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Fits `spec` on `population` for `seed`.
///
/// ItemKNN has nothing to select on validation data and is fitted on every
/// user. NeuMF masks a seeded `validation_fraction` of users, holds out one
/// track of each and early-stops on MRR@10.
pub fn fit(population: &Dataset, spec: &ModelSpec, seed: u64, options: &SweepOptions) -> Result<Fit> {
    let all: Vec<u32> = (0..population.user_count() as u32).collect();
    let split = || population.split_validation(options.validation_fraction, seed);
    match spec {
        ModelSpec::ItemKnn(config) => {
            let validation_users = if options.restrict_to_validation {
                split()?.validation
            } else {
                Vec::new()
            };
            let model = itemknn::fit(&population.build_interactions(&all), *config)?;
            Ok(Fit {
                model: FittedModel::ItemKnn(model),
                validation_users,
                report: None,
            })
        }
        ModelSpec::NeuMf(config) => {
            let split = split()?;
            let protocol = eval::hold_out(population, &split.validation, seed ^ HOLD_OUT_SALT);
            let config = NeuMfConfig { seed, ..config.clone() };
            let (model, report) = neumf::train(&population.build_interactions(&split.train), Some(&protocol), &config)?;
            Ok(Fit {
                model: FittedModel::NeuMf(model),
                validation_users: split.validation,
                report: Some(report),
            })
        }
    }
}

/// What a fitted model is measured on.
#[derive(Debug, Clone)]
pub struct Audit<'a> {
    pub dataset_tag: &'a str,
    pub variant: Variant,
    pub countries: &'a [Country],
    pub sources: &'a [LabelSource],
    pub policies: &'a [UnlabeledPolicy],
    pub grid: &'a SweepGrid,
}

/// Measures a fit for every (country, source, policy, K) of `audit`.
/// Countries absent from the population yield failed records.
pub fn measure(
    population: &Dataset,
    labels: &LabelTable,
    fit: &Fit,
    model: ModelKind,
    seed: u64,
    audit: &Audit<'_>,
    restrict_to_validation: bool,
) -> Vec<BiasRecord> {
    let mut out = Vec::new();
    let resolved: Vec<(TrackCountries, Vec<LocalCounts>)> = audit
        .sources
        .iter()
        .map(|&s| {
            let tracks = TrackCountries::resolve(population, labels, s);
            let listened = user_local_counts(population, &tracks);
            (tracks, listened)
        })
        .collect();
    for &country in audit.countries {
        let mut users = population.users_in(country);
        if restrict_to_validation {
            users.retain(|u| fit.validation_users.binary_search(u).is_ok());
        }
        let lists = if users.is_empty() {
            Err(Error::InvalidArgument(format!("no users from {country}")))
        } else {
            recommend_lists(fit.model.as_recommender(), population, &users, audit.grid.max())
        };
        if let Err(e) = &lists {
            log::warn!("{model}/{}/{country}/seed {seed}: {e}", audit.variant);
        }
        for (si, &source) in audit.sources.iter().enumerate() {
            let (tracks, listened) = &resolved[si];
            for &policy in audit.policies {
                for &k in audit.grid.values() {
                    let measured = lists
                        .as_ref()
                        .map_err(|e| Error::InvalidArgument(e.to_string()))
                        .and_then(|l| bias_from_lists(l, k, population, tracks, listened, policy));
                    let mut record = BiasRecord {
                        dataset: audit.dataset_tag.to_owned(),
                        country,
                        model,
                        variant: audit.variant,
                        source,
                        policy,
                        k,
                        seed,
                        bias: None,
                        users_counted: 0,
                        status: RunStatus::Failed,
                    };
                    match measured {
                        Ok(m) => {
                            if m.short_lists > 0 {
                                log::debug!("{model}/{country}/K={k}: {} lists shorter than K", m.short_lists);
                            }
                            record.bias = Some(m.bias);
                            record.users_counted = m.users_counted;
                            record.status = RunStatus::Ok;
                        }
                        Err(e) if lists.is_ok() => {
                            log::warn!("{model}/{country}/{source}/{policy}/K={k}/seed {seed}: {e}");
                        }
                        Err(_) => {}
                    }
                    out.push(record);
                }
            }
        }
    }
    out
}

/// Failed records for every measurement a fit would have produced.
pub fn failed_records(model: ModelKind, seed: u64, audit: &Audit<'_>) -> Vec<BiasRecord> {
    let mut out = Vec::new();
    for &country in audit.countries {
        for &source in audit.sources {
            for &policy in audit.policies {
                for &k in audit.grid.values() {
                    out.push(BiasRecord {
                        dataset: audit.dataset_tag.to_owned(),
                        country,
                        model,
                        variant: audit.variant,
                        source,
                        policy,
                        k,
                        seed,
                        bias: None,
                        users_counted: 0,
                        status: RunStatus::Failed,
                    });
                }
            }
        }
    }
    out
}

/// The training population of `variant`: the whole dataset, or the events of
/// `country`'s users only.
pub fn population(dataset: &Dataset, variant: Variant, country: Country) -> Dataset {
    match variant {
        Variant::Global => dataset.clone(),
        Variant::Local => dataset.filter_country(country),
    }
}

/// Records for one (country, model, variant, source, policy) experiment over
/// `grid` and `seeds`. A failed fit marks that seed's records failed.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    dataset_tag: &str,
    dataset: &Dataset,
    labels: &LabelTable,
    country: Country,
    spec: &ModelSpec,
    variant: Variant,
    source: LabelSource,
    policy: UnlabeledPolicy,
    grid: &SweepGrid,
    seeds: &[u64],
    options: &SweepOptions,
) -> Vec<BiasRecord> {
    let population = population(dataset, variant, country);
    let audit = Audit {
        dataset_tag,
        variant,
        countries: &[country],
        sources: &[source],
        policies: &[policy],
        grid,
    };
    let mut shared: Option<Fit> = None;
    let mut out = Vec::new();
    for &seed in seeds {
        // Unseeded models are fitted once and re-measured per seed.
        let fitted = if spec.is_seeded() || options.restrict_to_validation || shared.is_none() {
            fit(&population, spec, seed, options).map(Some)
        } else {
            Ok(None)
        };
        match fitted {
            Ok(Some(f)) => {
                out.extend(measure(
                    &population,
                    labels,
                    &f,
                    spec.kind(),
                    seed,
                    &audit,
                    options.restrict_to_validation,
                ));
                if !spec.is_seeded() {
                    shared = Some(f);
                }
            }
            Ok(None) => {
                let f = shared.as_ref().expect("fitted on first seed");
                out.extend(measure(&population, labels, f, spec.kind(), seed, &audit, false));
            }
            Err(e) => {
                log::warn!("{}/{variant}/{country}/seed {seed}: fit failed: {e}", spec.kind());
                out.extend(failed_records(spec.kind(), seed, &audit));
            }
        }
    }
    out
}

/// Mean and sample standard deviation of one key's successful runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub key: RecordKey,
    pub mean: f64,
    /// `None` for a single run.
    pub std: Option<f64>,
    pub n_runs: usize,
}

/// Welford accumulation; a constant sample has exactly zero spread.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> Option<f64> {
        (self.n > 1).then(|| (self.m2 / (self.n - 1) as f64).sqrt())
    }
}

/// Per-key mean and (n - 1) standard deviation over successful records,
/// in key order. Keys with no successful record are omitted.
pub fn aggregate(records: &[BiasRecord]) -> Vec<AggregateRecord> {
    let mut groups: BTreeMap<RecordKey, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if let (RunStatus::Ok, Some(b)) = (r.status, r.bias) {
            groups.entry(r.key()).or_default().push((r.seed, b));
        }
    }
    groups
        .into_iter()
        .map(|(key, mut runs)| {
            // Seed order fixes the float summation order.
            runs.sort_by_key(|&(s, _)| s);
            let mut w = Welford::default();
            runs.iter().for_each(|&(_, b)| w.push(b));
            AggregateRecord {
                key,
                mean: w.mean,
                std: w.std(),
                n_runs: w.n,
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        let k = &r.key;
        w.write_record([
            k.dataset.clone(),
            k.country.to_string(),
            k.model.to_string(),
            k.variant.to_string(),
            k.source.to_string(),
            k.policy.to_string(),
            k.k.to_string(),
            r.mean.to_string(),
            r.std.map(|s| s.to_string()).unwrap_or_default(),
            r.n_runs.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<aggregate>", e))?;
    Ok(())
}

pub fn read_aggregate<R: Read>(reader: R) -> Result<Vec<AggregateRecord>> {
    let mut rdr = crate::corpus::csv_reader(reader);
    crate::corpus::check_header(rdr.headers()?, &AGGREGATE_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line());
        let fields: Vec<&str> = row.iter().collect();
        let parse = || -> Result<AggregateRecord> {
            if fields.len() != AGGREGATE_HEADER.len() {
                return Err(Error::InvalidArgument(format!(
                    "expected {} fields, got {}",
                    AGGREGATE_HEADER.len(),
                    fields.len()
                )));
            }
            Ok(AggregateRecord {
                key: parse_key(&fields)?,
                mean: parse_num(fields[7], "mean")?,
                std: match fields[8] {
                    "" => None,
                    s => Some(parse_num(s, "std")?),
                },
                n_runs: parse_num(fields[9], "n_runs")?,
            })
        };
        out.push(parse().map_err(|e| malformed(line, e))?);
    }
    Ok(out)
}
