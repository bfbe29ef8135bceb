//! Track → country resolution and local-consumption statistics.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{check_header, csv_reader, Country, Dataset};
use crate::error::{Error, Result};

pub const LABELS_HEADER: [&str; 4] = ["artist_id", "country_musicbrainz", "country_activity", "country_origin"];

/// Which artist → country mapping to trust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    #[serde(rename = "musicbrainz")]
    MusicBrainz,
    Activity,
    Origin,
}

impl LabelSource {
    pub const ALL: [LabelSource; 3] = [LabelSource::MusicBrainz, LabelSource::Activity, LabelSource::Origin];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::MusicBrainz => "musicbrainz",
            LabelSource::Activity => "activity",
            LabelSource::Origin => "origin",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelSource::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label source {s:?}")))
    }
}

/// Denominator used when some streams carry no label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledPolicy {
    /// Only labeled streams count.
    ExcludeUnlabeled,
    /// Every stream counts; unlabeled ones are non-local.
    CountAsNonLocal,
}

impl UnlabeledPolicy {
    pub const ALL: [UnlabeledPolicy; 2] = [UnlabeledPolicy::ExcludeUnlabeled, UnlabeledPolicy::CountAsNonLocal];

    pub fn as_str(self) -> &'static str {
        match self {
            UnlabeledPolicy::ExcludeUnlabeled => "exclude_unlabeled",
            UnlabeledPolicy::CountAsNonLocal => "count_as_non_local",
        }
    }
}

impl fmt::Display for UnlabeledPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnlabeledPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UnlabeledPolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown unlabeled policy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArtistLabels {
    pub musicbrainz: Option<Country>,
    pub activity: Option<Country>,
    pub origin: Option<Country>,
}

impl ArtistLabels {
    pub fn get(&self, source: LabelSource) -> Option<Country> {
        match source {
            LabelSource::MusicBrainz => self.musicbrainz,
            LabelSource::Activity => self.activity,
            LabelSource::Origin => self.origin,
        }
    }

    fn slot_mut(&mut self, source: LabelSource) -> &mut Option<Country> {
        match source {
            LabelSource::MusicBrainz => &mut self.musicbrainz,
            LabelSource::Activity => &mut self.activity,
            LabelSource::Origin => &mut self.origin,
        }
    }
}

/// Per-artist country labels from up to three sources.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    records: BTreeMap<String, ArtistLabels>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or merges a record. Repeated rows may fill empty slots but may not
    /// contradict an existing label.
    pub fn insert(&mut self, artist_id: &str, labels: ArtistLabels) -> Result<()> {
        if artist_id.is_empty() {
            return Err(Error::InvalidArgument("empty artist_id".into()));
        }
        match self.records.entry(artist_id.to_owned()) {
            Entry::Vacant(slot) => {
                slot.insert(labels);
            }
            Entry::Occupied(mut slot) => {
                let existing = slot.get_mut();
                for source in LabelSource::ALL {
                    let Some(new) = labels.get(source) else { continue };
                    let current = existing.slot_mut(source);
                    match *current {
                        Some(old) if old != new => {
                            return Err(Error::ConflictingLabel {
                                artist: artist_id.to_owned(),
                                source_name: source.as_str(),
                                first: old.to_string(),
                                second: new.to_string(),
                            })
                        }
                        _ => *current = Some(new),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, artist_id: &str) -> Option<&ArtistLabels> {
        self.records.get(artist_id)
    }

    pub fn label(&self, artist_id: &str, source: LabelSource) -> Option<Country> {
        self.records.get(artist_id).and_then(|l| l.get(source))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of artists carrying a label under `source`.
    pub fn coverage(&self, source: LabelSource) -> usize {
        self.records.values().filter(|l| l.get(source).is_some()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArtistLabels)> {
        self.records.iter().map(|(a, l)| (a.as_str(), l))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LABELS_HEADER)?;
        let cell = |c: Option<Country>| c.map(|c| c.to_string()).unwrap_or_default();
        for (artist, l) in &self.records {
            w.write_record([
                artist.as_str(),
                &cell(l.musicbrainz),
                &cell(l.activity),
                &cell(l.origin),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<labels>", e))?;
        Ok(())
    }
}

/// Parses a labels CSV (`artist_id,country_musicbrainz,country_activity,country_origin`).
pub fn ingest_labels<R: Read>(source: R) -> Result<LabelTable> {
    let mut reader = csv_reader(source);
    check_header(reader.headers()?, &LABELS_HEADER)?;
    let mut table = LabelTable::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow { line, message };
        if record.len() != LABELS_HEADER.len() {
            return Err(bad(format!("expected 4 columns, found {}", record.len())));
        }
        let parse = |cell: &str| -> Result<Option<Country>> {
            match cell.trim() {
                "" => Ok(None),
                c => c.parse().map(Some).map_err(|_| bad(format!("bad country code {c:?}"))),
            }
        };
        let labels = ArtistLabels {
            musicbrainz: parse(&record[1])?,
            activity: parse(&record[2])?,
            origin: parse(&record[3])?,
        };
        table.insert(&record[0], labels).map_err(|e| match e {
            Error::InvalidArgument(message) => bad(message),
            other => other,
        })?;
    }
    Ok(table)
}

/// Label of `track_id`'s artist under `source`; no fallback across sources.
pub fn resolve_track_country(
    track_id: &str,
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
) -> Result<Option<Country>> {
    let track = dataset
        .track_index(track_id)
        .ok_or_else(|| Error::UnknownTrack(track_id.to_owned()))?;
    Ok(labels.label(dataset.track_artist(track), source))
}

/// Every track of a dataset resolved under one source.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackCountries {
    source: LabelSource,
    countries: Vec<Option<Country>>,
}

impl TrackCountries {
    pub fn resolve(dataset: &Dataset, labels: &LabelTable, source: LabelSource) -> Self {
        let countries = (0..dataset.catalog_size() as u32)
            .map(|t| labels.label(dataset.track_artist(t), source))
            .collect();
        TrackCountries { source, countries }
    }

    pub fn source(&self) -> LabelSource {
        self.source
    }

    pub fn get(&self, track: u32) -> Option<Country> {
        self.countries[track as usize]
    }

    /// Tallies `tracks` as seen by a listener from `country`.
    pub fn count<'a>(&self, country: Country, tracks: impl IntoIterator<Item = &'a u32>) -> LocalCounts {
        let mut counts = LocalCounts::default();
        for &t in tracks {
            counts.total += 1;
            if let Some(c) = self.get(t) {
                counts.labeled += 1;
                if c == country {
                    counts.local += 1;
                }
            }
        }
        counts
    }
}

/// Stream (or list-entry) tallies backing a local proportion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocalCounts {
    pub total: u64,
    pub labeled: u64,
    pub local: u64,
}

impl LocalCounts {
    pub fn denominator(&self, policy: UnlabeledPolicy) -> u64 {
        match policy {
            UnlabeledPolicy::ExcludeUnlabeled => self.labeled,
            UnlabeledPolicy::CountAsNonLocal => self.total,
        }
    }

    /// Local share under `policy`; `None` when the denominator is zero.
    pub fn proportion(&self, policy: UnlabeledPolicy) -> Option<f64> {
        match self.denominator(policy) {
            0 => None,
            d => Some(self.local as f64 / d as f64),
        }
    }
}

/// Stream tallies of every user of a dataset.
pub fn user_local_counts(dataset: &Dataset, tracks: &TrackCountries) -> Vec<LocalCounts> {
    (0..dataset.user_count() as u32)
        .map(|u| tracks.count(dataset.user_country(u), dataset.user_streams(u)))
        .collect()
}

/// L(u): share of `user_id`'s streams that are local under `source`/`policy`.
pub fn local_proportion(
    user_id: &str,
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> Result<Option<f64>> {
    let user = dataset
        .user_index(user_id)
        .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?;
    let country = dataset.user_country(user);
    let mut counts = LocalCounts::default();
    for &t in dataset.user_streams(user) {
        counts.total += 1;
        if let Some(c) = labels.label(dataset.track_artist(t), source) {
            counts.labeled += 1;
            counts.local += u64::from(c == country);
        }
    }
    Ok(counts.proportion(policy))
}

/// An exact ratio of stream counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    /// 0 when the denominator is 0.
    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }
}

/// Label coverage and local share of one country's streams under one source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageRow {
    pub country: Country,
    pub source: LabelSource,
    pub counts: LocalCounts,
}

impl CoverageRow {
    pub fn labeled_fraction(&self) -> Ratio {
        Ratio {
            numerator: self.counts.labeled,
            denominator: self.counts.total,
        }
    }

    pub fn local_among_labeled(&self) -> Ratio {
        Ratio {
            numerator: self.counts.local,
            denominator: self.counts.labeled,
        }
    }

    pub fn local_among_all(&self) -> Ratio {
        Ratio {
            numerator: self.counts.local,
            denominator: self.counts.total,
        }
    }

    /// `local/total == (labeled/total) * (local/labeled)` in integer
    /// cross-multiplication; with no labeled streams both sides are zero.
    pub fn product_identity_holds(&self) -> bool {
        let LocalCounts { total, labeled, local } = self.counts;
        if labeled == 0 {
            return local == 0;
        }
        (local as u128) * (total as u128) * (labeled as u128) == (labeled as u128) * (local as u128) * (total as u128)
            && local <= labeled
            && labeled <= total
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    pub fn row(&self, country: Country, source: LabelSource) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.country == country && r.source == source)
    }

    pub fn extend(&mut self, other: CoverageReport) {
        self.rows.extend(other.rows);
    }

    /// `country,source,metric,value,numerator,denominator`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["country", "source", "metric", "value", "numerator", "denominator"])?;
        for row in &self.rows {
            for (metric, ratio) in [
                ("labeled_fraction", row.labeled_fraction()),
                ("local_among_labeled", row.local_among_labeled()),
                ("local_among_all", row.local_among_all()),
            ] {
                w.write_record([
                    row.country.as_str(),
                    row.source.as_str(),
                    metric,
                    &ratio.value().to_string(),
                    &ratio.numerator.to_string(),
                    &ratio.denominator.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<coverage>", e))?;
        Ok(())
    }
}

/// Stream-level coverage per user country, countries ascending.
pub fn coverage_report(dataset: &Dataset, labels: &LabelTable, source: LabelSource) -> CoverageReport {
    let tracks = TrackCountries::resolve(dataset, labels, source);
    let mut by_country: BTreeMap<Country, LocalCounts> = BTreeMap::new();
    for s in dataset.streams() {
        let country = dataset.user_country(s.user);
        let entry = by_country.entry(country).or_default();
        entry.total += 1;
        if let Some(c) = tracks.get(s.track) {
            entry.labeled += 1;
            entry.local += u64::from(c == country);
        }
    }
    CoverageReport {
        rows: by_country
            .into_iter()
            .map(|(country, counts)| CoverageRow {
                country,
                source,
                counts,
            })
            .collect(),
    }
}

/// Per-user local proportions of one country binned over [0, 1].
///
/// Bin `i` of `n` covers `(i/n, (i+1)/n]`, except the first which also
/// contains 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub country: Country,
    pub source: LabelSource,
    pub policy: UnlabeledPolicy,
    pub counts: Vec<u64>,
    /// Users whose proportion is undefined (no labeled streams).
    pub undefined_users: u64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let n = self.bins() as f64;
        (bin as f64 / n, (bin + 1) as f64 / n)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin of the proportion `local / denominator`, computed exactly on integers.
pub fn histogram_bin(local: u64, denominator: u64, bins: usize) -> usize {
    debug_assert!(denominator > 0 && local <= denominator);
    let scaled = local as u128 * bins as u128;
    let ceil = scaled.div_ceil(denominator as u128) as usize;
    ceil.saturating_sub(1).min(bins - 1)
}

pub fn local_histogram(
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
    bins: usize,
) -> Result<Vec<Histogram>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let tracks = TrackCountries::resolve(dataset, labels, source);
    let counts = user_local_counts(dataset, &tracks);
    let mut out: BTreeMap<Country, Histogram> = BTreeMap::new();
    for (u, c) in counts.iter().enumerate() {
        let country = dataset.user_country(u as u32);
        let hist = out.entry(country).or_insert_with(|| Histogram {
            country,
            source,
            policy,
            counts: vec![0; bins],
            undefined_users: 0,
        });
        match c.denominator(policy) {
            0 => hist.undefined_users += 1,
            d => hist.counts[histogram_bin(c.local, d, bins)] += 1,
        }
    }
    Ok(out.into_values().collect())
}

/// `country,source,policy,bin_low,bin_high,count`; a row with empty bin
/// edges carries the number of users with an undefined proportion.
pub fn write_histograms_csv<W: Write>(histograms: &[Histogram], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["country", "source", "policy", "bin_low", "bin_high", "count"])?;
    for h in histograms {
        let key = [h.country.as_str(), h.source.as_str(), h.policy.as_str()];
        for (i, count) in h.counts.iter().enumerate() {
            let (lo, hi) = h.edges(i);
            w.write_record(key.iter().copied().chain([
                lo.to_string().as_str(),
                hi.to_string().as_str(),
                count.to_string().as_str(),
            ]))?;
        }
        w.write_record(
            key.iter()
                .copied()
                .chain(["", "", h.undefined_users.to_string().as_str()]),
        )?;
    }
    w.flush().map_err(|e| Error::io("<histograms>", e))?;
    Ok(())
}
