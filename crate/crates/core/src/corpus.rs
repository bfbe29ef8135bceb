//! Listening-log ingestion and interaction-matrix construction.
//!
//! A [`Dataset`] keeps every stream in file order. Users and tracks are
//! interned and their indices follow lexicographic id order, so any matrix
//! derived from a dataset is independent of the row order of the source file.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const EVENTS_HEADER: [&str; 5] = ["user_id", "track_id", "artist_id", "user_country", "timestamp"];

/// ISO-3166 alpha-2 country code, two uppercase ASCII letters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Country([u8; 2]);

impl Country {
    pub fn as_str(&self) -> &str {
        // Constructed only from uppercase ASCII.
        std::str::from_utf8(&self.0).expect("ascii country code")
    }
}

impl FromStr for Country {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.as_bytes() {
            [a, b] if a.is_ascii_uppercase() && b.is_ascii_uppercase() => Ok(Country([*a, *b])),
            _ => Err(Error::InvalidArgument(format!(
                "bad country code {s:?}: expected two uppercase ASCII letters"
            ))),
        }
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Country({})", self.as_str())
    }
}

impl serde::Serialize for Country {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Country {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One stream as it appears in the events file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListeningEvent {
    pub user_id: String,
    pub track_id: String,
    pub artist_id: String,
    pub user_country: Country,
    pub timestamp: Option<i64>,
}

/// One stream in index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    pub user: u32,
    pub track: u32,
    pub timestamp: Option<i64>,
}

/// A listening log with interned users and tracks.
///
/// User `i` is the `i`-th user id in lexicographic order, likewise for tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    user_ids: Arc<[String]>,
    user_countries: Vec<Country>,
    track_ids: Arc<[String]>,
    track_artists: Vec<String>,
    streams: Vec<Stream>,
    // CSR over streams grouped by user, file order within a user.
    user_offsets: Vec<usize>,
    user_stream_tracks: Vec<u32>,
    user_index: HashMap<String, u32>,
    track_index: HashMap<String, u32>,
}

impl Dataset {
    pub fn empty() -> Self {
        DatasetBuilder::default().finish()
    }

    /// Builds a dataset from events in order, validating the invariants.
    pub fn from_events<I>(events: I) -> Result<Self>
    where
        I: IntoIterator<Item = ListeningEvent>,
    {
        let mut builder = DatasetBuilder::default();
        for event in events {
            builder.push(
                &event.user_id,
                &event.track_id,
                &event.artist_id,
                event.user_country,
                event.timestamp,
            )?;
        }
        Ok(builder.finish())
    }

    /// Number of distinct users (M).
    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    /// Number of distinct tracks (N).
    pub fn catalog_size(&self) -> usize {
        self.track_ids.len()
    }

    pub fn event_count(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    pub fn shared_track_ids(&self) -> Arc<[String]> {
        Arc::clone(&self.track_ids)
    }

    pub fn user_id(&self, user: u32) -> &str {
        &self.user_ids[user as usize]
    }

    pub fn track_id(&self, track: u32) -> &str {
        &self.track_ids[track as usize]
    }

    pub fn user_country(&self, user: u32) -> Country {
        self.user_countries[user as usize]
    }

    pub fn track_artist(&self, track: u32) -> &str {
        &self.track_artists[track as usize]
    }

    pub fn user_index(&self, user_id: &str) -> Option<u32> {
        self.user_index.get(user_id).copied()
    }

    pub fn track_index(&self, track_id: &str) -> Option<u32> {
        self.track_index.get(track_id).copied()
    }

    /// Tracks of every stream of `user`, in file order, repeats included.
    pub fn user_streams(&self, user: u32) -> &[u32] {
        let u = user as usize;
        &self.user_stream_tracks[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Distinct tracks streamed by `user`, ascending.
    pub fn user_tracks(&self, user: u32) -> Vec<u32> {
        let mut tracks = self.user_streams(user).to_vec();
        tracks.sort_unstable();
        tracks.dedup();
        tracks
    }

    /// Users whose country is `country`, ascending.
    pub fn users_in(&self, country: Country) -> Vec<u32> {
        (0..self.user_count() as u32)
            .filter(|&u| self.user_countries[u as usize] == country)
            .collect()
    }

    /// Distinct user countries, ascending.
    pub fn countries(&self) -> Vec<Country> {
        let mut countries = self.user_countries.clone();
        countries.sort_unstable();
        countries.dedup();
        countries
    }

    /// Events in file order.
    pub fn events(&self) -> impl Iterator<Item = ListeningEvent> + '_ {
        self.streams.iter().map(|s| ListeningEvent {
            user_id: self.user_id(s.user).to_owned(),
            track_id: self.track_id(s.track).to_owned(),
            artist_id: self.track_artist(s.track).to_owned(),
            user_country: self.user_country(s.user),
            timestamp: s.timestamp,
        })
    }

    /// Keeps exactly the events of users from `country`; tracks left without
    /// events disappear and indices are recomputed.
    pub fn filter_country(&self, country: Country) -> Dataset {
        let mut builder = DatasetBuilder::default();
        for s in &self.streams {
            if self.user_country(s.user) == country {
                builder
                    .push(
                        self.user_id(s.user),
                        self.track_id(s.track),
                        self.track_artist(s.track),
                        country,
                        s.timestamp,
                    )
                    .expect("subset of a valid dataset is valid");
            }
        }
        builder.finish()
    }

    /// Draws `round(fraction * M)` validation users uniformly at random.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<UserSplit> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction {fraction} outside (0, 1)"
            )));
        }
        let m = self.user_count();
        if m < 10 {
            return Err(Error::InvalidArgument(format!(
                "validation split needs at least 10 users, dataset has {m}"
            )));
        }
        let n_validation = (fraction * m as f64).round() as usize;
        if n_validation == 0 || n_validation == m {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} of {m} users leaves an empty side of the split"
            )));
        }
        let mut users: Vec<u32> = (0..m as u32).collect();
        users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut validation = users[..n_validation].to_vec();
        let mut train = users[n_validation..].to_vec();
        validation.sort_unstable();
        train.sort_unstable();
        Ok(UserSplit { train, validation })
    }

    /// Binarized interactions of `users`. Columns span the whole catalog, so
    /// column `j` is track `j` of this dataset.
    pub fn build_interactions(&self, users: &[u32]) -> InteractionMatrix {
        let mut rows: Vec<u32> = users.to_vec();
        rows.sort_unstable();
        rows.dedup();
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for &u in &rows {
            indices.extend(self.user_tracks(u));
            indptr.push(indices.len());
        }
        InteractionMatrix {
            user_ids: rows.iter().map(|&u| self.user_id(u).to_owned()).collect(),
            row_users: rows,
            track_ids: self.shared_track_ids(),
            indptr,
            indices,
        }
    }

    pub fn write_events_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(EVENTS_HEADER)?;
        for event in self.events() {
            let ts = event.timestamp.map(|t| t.to_string()).unwrap_or_default();
            w.write_record([
                event.user_id.as_str(),
                &event.track_id,
                &event.artist_id,
                event.user_country.as_str(),
                &ts,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<events>", e))?;
        Ok(())
    }
}

#[derive(Default)]
struct DatasetBuilder {
    user_ids: Vec<String>,
    user_countries: Vec<Country>,
    user_lookup: HashMap<String, u32>,
    track_ids: Vec<String>,
    track_artists: Vec<String>,
    track_lookup: HashMap<String, u32>,
    streams: Vec<Stream>,
}

impl DatasetBuilder {
    fn push(
        &mut self,
        user_id: &str,
        track_id: &str,
        artist_id: &str,
        country: Country,
        timestamp: Option<i64>,
    ) -> Result<()> {
        for (name, value) in [("user_id", user_id), ("track_id", track_id), ("artist_id", artist_id)] {
            if value.is_empty() {
                return Err(Error::InvalidArgument(format!("empty {name}")));
            }
        }
        let user = match self.user_lookup.get(user_id) {
            Some(&u) => {
                let known = self.user_countries[u as usize];
                if known != country {
                    return Err(Error::ConflictingCountry {
                        user: user_id.to_owned(),
                        first: known.to_string(),
                        second: country.to_string(),
                    });
                }
                u
            }
            None => {
                let u = self.user_ids.len() as u32;
                self.user_ids.push(user_id.to_owned());
                self.user_countries.push(country);
                self.user_lookup.insert(user_id.to_owned(), u);
                u
            }
        };
        let track = match self.track_lookup.get(track_id) {
            Some(&t) => {
                let known = &self.track_artists[t as usize];
                if known != artist_id {
                    return Err(Error::ConflictingArtist {
                        track: track_id.to_owned(),
                        first: known.clone(),
                        second: artist_id.to_owned(),
                    });
                }
                t
            }
            None => {
                let t = self.track_ids.len() as u32;
                self.track_ids.push(track_id.to_owned());
                self.track_artists.push(artist_id.to_owned());
                self.track_lookup.insert(track_id.to_owned(), t);
                t
            }
        };
        self.streams.push(Stream { user, track, timestamp });
        Ok(())
    }

    fn finish(self) -> Dataset {
        let (user_ids, user_remap) = sorted_remap(self.user_ids);
        let (track_ids, track_remap) = sorted_remap(self.track_ids);
        let mut user_countries = vec![Country(*b"ZZ"); user_ids.len()];
        for (old, country) in self.user_countries.into_iter().enumerate() {
            user_countries[user_remap[old] as usize] = country;
        }
        let mut track_artists = vec![String::new(); track_ids.len()];
        for (old, artist) in self.track_artists.into_iter().enumerate() {
            track_artists[track_remap[old] as usize] = artist;
        }
        let streams: Vec<Stream> = self
            .streams
            .into_iter()
            .map(|s| Stream {
                user: user_remap[s.user as usize],
                track: track_remap[s.track as usize],
                timestamp: s.timestamp,
            })
            .collect();

        let mut user_offsets = vec![0usize; user_ids.len() + 1];
        for s in &streams {
            user_offsets[s.user as usize + 1] += 1;
        }
        for i in 0..user_ids.len() {
            user_offsets[i + 1] += user_offsets[i];
        }
        let mut cursor = user_offsets.clone();
        let mut user_stream_tracks = vec![0u32; streams.len()];
        for s in &streams {
            let slot = &mut cursor[s.user as usize];
            user_stream_tracks[*slot] = s.track;
            *slot += 1;
        }

        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let track_index = track_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Dataset {
            user_ids: user_ids.into(),
            user_countries,
            track_ids: track_ids.into(),
            track_artists,
            streams,
            user_offsets,
            user_stream_tracks,
            user_index,
            track_index,
        }
    }
}

/// Sorts ids and returns the old-index → new-index map.
fn sorted_remap(ids: Vec<String>) -> (Vec<String>, Vec<u32>) {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut remap = vec![0u32; ids.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old as usize] = new as u32;
    }
    let mut slots: Vec<Option<String>> = ids.into_iter().map(Some).collect();
    let sorted = order
        .iter()
        .map(|&old| slots[old as usize].take().expect("each id moved once"))
        .collect();
    (sorted, remap)
}

/// Train/validation partition of a dataset's users (ascending indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
}

/// Binarized user × track matrix in CSR form.
///
/// Rows are a sorted subset of a dataset's users; columns are that dataset's
/// full track catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    row_users: Vec<u32>,
    user_ids: Vec<String>,
    track_ids: Arc<[String]>,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

impl InteractionMatrix {
    /// Builds a matrix directly from per-row positive columns. Rows are
    /// labelled `u0`, `u1`, ... and columns `t0`, `t1`, ...; intended for
    /// tests and synthetic experiments.
    /// Matrix with synthetic ids `u0..`, `t0..`, zero-padded so that ids
    /// sort like indices.
    pub fn from_rows(n_cols: usize, rows: &[Vec<u32>]) -> Result<Self> {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        for row in rows {
            let mut row = row.clone();
            row.sort_unstable();
            row.dedup();
            if let Some(&max) = row.last() {
                if max as usize >= n_cols {
                    return Err(Error::InvalidArgument(format!(
                        "column {max} out of range for {n_cols} columns"
                    )));
                }
            }
            indices.extend(row);
            indptr.push(indices.len());
        }
        Ok(InteractionMatrix {
            row_users: (0..rows.len() as u32).collect(),
            user_ids: (0..rows.len())
                .map(|i| format!("u{i:0w$}", w = digits(rows.len())))
                .collect(),
            track_ids: (0..n_cols).map(|j| format!("t{j:0w$}", w = digits(n_cols))).collect(),
            indptr,
            indices,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_users.len()
    }

    pub fn n_cols(&self) -> usize {
        self.track_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Positive columns of `row`, ascending.
    pub fn row(&self, row: usize) -> &[u32] {
        &self.indices[self.indptr[row]..self.indptr[row + 1]]
    }

    pub fn row_len(&self, row: usize) -> usize {
        self.indptr[row + 1] - self.indptr[row]
    }

    /// Dataset user index of each row.
    pub fn row_users(&self) -> &[u32] {
        &self.row_users
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    pub fn row_of_user(&self, user: u32) -> Option<usize> {
        self.row_users.binary_search(&user).ok()
    }

    pub fn row_of_id(&self, user_id: &str) -> Option<usize> {
        self.user_ids.binary_search_by(|id| id.as_str().cmp(user_id)).ok()
    }

    pub fn contains(&self, row: usize, col: u32) -> bool {
        self.row(row).binary_search(&col).is_ok()
    }

    /// Per-column lists of rows, ascending (the CSC view).
    pub fn columns(&self) -> Vec<Vec<u32>> {
        let mut cols = vec![Vec::new(); self.n_cols()];
        for r in 0..self.n_rows() {
            for &c in self.row(r) {
                cols[c as usize].push(r as u32);
            }
        }
        cols
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        (0..self.n_rows()).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|ext| ext == "gz") {
        Ok(Box::new(MultiGzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

/// Reads an events CSV from a path; `.gz` files are decompressed.
pub fn read_events_file(path: &Path) -> Result<Dataset> {
    let reader = open_maybe_gz(path)?;
    ingest_events(reader).map_err(|e| e.in_file(path))
}

/// Reads a labels CSV from a path; `.gz` files are decompressed.
pub fn read_labels_file(path: &Path) -> Result<crate::LabelTable> {
    let reader = open_maybe_gz(path)?;
    crate::locality::ingest_labels(reader).map_err(|e| e.in_file(path))
}

pub(crate) fn check_header(record: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = record.iter().map(|f| f.trim_start_matches('\u{feff}')).collect();
    if found != expected {
        return Err(Error::MalformedRow {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

pub(crate) fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source)
}

/// Parses an events CSV (`user_id,track_id,artist_id,user_country,timestamp`).
pub fn ingest_events<R: Read>(source: R) -> Result<Dataset> {
    let mut reader = csv_reader(source);
    check_header(reader.headers()?, &EVENTS_HEADER)?;
    let mut builder = DatasetBuilder::default();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow { line, message };
        if record.len() != EVENTS_HEADER.len() {
            return Err(bad(format!("expected 5 columns, found {}", record.len())));
        }
        let country: Country = record[3]
            .parse()
            .map_err(|_| bad(format!("bad country code {:?}", &record[3])))?;
        let timestamp = match record[4].trim() {
            "" => None,
            ts => Some(ts.parse::<i64>().map_err(|_| bad(format!("bad timestamp {ts:?}")))?),
        };
        builder
            .push(&record[0], &record[1], &record[2], country, timestamp)
            .map_err(|e| match e {
                Error::InvalidArgument(message) => bad(message),
                other => other,
            })?;
    }
    Ok(builder.finish())
}
