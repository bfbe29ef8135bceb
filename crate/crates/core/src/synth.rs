//! Synthetic listening corpora with known per-user local fractions.
//!
//! Every stream first flips a locality coin. Heads picks a track from the
//! listener's own country, tails from the pooled tracks of every other
//! country; within a pool tracks are drawn from a power law over their pool
//! rank. Artist labels are then dropped independently per source.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Country, Dataset, ListeningEvent};
use crate::error::{Error, Result};
use crate::locality::{ArtistLabels, LabelSource, LabelTable};

pub const GROUND_TRUTH_HEADER: [&str; 2] = ["user_id", "true_local_fraction"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCountry {
    pub code: Country,
    pub users: usize,
    pub artists: usize,
    #[serde(default = "one")]
    pub tracks_per_artist: usize,
    /// Probability that a stream of this country's users is local.
    pub locality: f64,
}

fn one() -> usize {
    1
}

/// Per-source probability that an artist keeps its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelCoverage {
    pub musicbrainz: f64,
    pub activity: f64,
    pub origin: f64,
}

impl Default for LabelCoverage {
    fn default() -> Self {
        LabelCoverage::uniform(1.0)
    }
}

impl LabelCoverage {
    pub fn uniform(p: f64) -> Self {
        LabelCoverage {
            musicbrainz: p,
            activity: p,
            origin: p,
        }
    }

    pub fn get(&self, source: LabelSource) -> f64 {
        match source {
            LabelSource::MusicBrainz => self.musicbrainz,
            LabelSource::Activity => self.activity,
            LabelSource::Origin => self.origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub countries: Vec<SynthCountry>,
    /// Exponent `s` of the `1 / rank^s` popularity law; 0 is uniform.
    pub popularity_skew: f64,
    /// Inclusive range of streams per user.
    pub streams_per_user: (usize, usize),
    pub label_coverage: LabelCoverage,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let country = |code: &str, locality| SynthCountry {
            code: code.parse().expect("valid code"),
            users: 100,
            artists: 40,
            tracks_per_artist: 5,
            locality,
        };
        SynthConfig {
            countries: vec![country("FR", 0.6), country("DE", 0.3), country("BR", 0.7)],
            popularity_skew: 1.0,
            streams_per_user: (20, 60),
            label_coverage: LabelCoverage::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Two countries of `users` users and `tracks` single-track artists each,
    /// whose users only listen locally, so the interaction matrix is block
    /// diagonal.
    pub fn two_block(users: usize, tracks: usize, seed: u64) -> Self {
        let country = |code: &str| SynthCountry {
            code: code.parse().expect("valid code"),
            users,
            artists: tracks,
            tracks_per_artist: 1,
            locality: 1.0,
        };
        SynthConfig {
            countries: vec![country("AA"), country("BB")],
            popularity_skew: 1.0,
            streams_per_user: (10, 30),
            label_coverage: LabelCoverage::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synth: {m}")));
        if self.countries.is_empty() {
            return bad("no countries".into());
        }
        for (i, c) in self.countries.iter().enumerate() {
            if self.countries[..i].iter().any(|o| o.code == c.code) {
                return bad(format!("country {} listed twice", c.code));
            }
            if c.users == 0 || c.tracks_per_artist == 0 {
                return bad(format!(
                    "country {} needs at least one user and one track per artist",
                    c.code
                ));
            }
            if !(0.0..=1.0).contains(&c.locality) {
                return bad(format!("locality of {} outside [0, 1]", c.code));
            }
            if c.artists == 0 && c.locality > 0.0 {
                return bad(format!("country {} has no artists but locality {}", c.code, c.locality));
            }
            let foreign = self.countries.iter().any(|o| o.code != c.code && o.artists > 0);
            if !foreign && c.locality < 1.0 {
                return bad(format!(
                    "country {} has locality {} but no foreign artists exist",
                    c.code, c.locality
                ));
            }
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return bad("popularity_skew must be finite and >= 0".into());
        }
        let (lo, hi) = self.streams_per_user;
        if lo == 0 || lo > hi {
            return bad(format!("streams_per_user ({lo}, {hi}) must satisfy 1 <= min <= max"));
        }
        for s in LabelSource::ALL {
            if !(0.0..=1.0).contains(&self.label_coverage.get(s)) {
                return bad(format!("label coverage of {s} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// A generated corpus and the local fraction each user was generated with.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub labels: LabelTable,
    /// `(user_id, local streams / streams)` in user-id order.
    pub ground_truth: Vec<(String, f64)>,
}

struct Pool {
    tracks: Vec<(String, String)>,
    popularity: Option<WeightedIndex<f64>>,
}

impl Pool {
    fn new(tracks: Vec<(String, String)>, skew: f64) -> Self {
        let weights = (1..=tracks.len()).map(|r| (r as f64).powf(-skew));
        let popularity = (!tracks.is_empty()).then(|| WeightedIndex::new(weights).expect("positive weights"));
        Pool { tracks, popularity }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> &(String, String) {
        let dist = self.popularity.as_ref().expect("sampled pools are non-empty");
        &self.tracks[dist.sample(rng)]
    }
}

fn artist_id(country: Country, artist: usize) -> String {
    format!("{country}-a{artist:04}")
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let country_tracks: Vec<Vec<(String, String)>> = config
        .countries
        .iter()
        .map(|c| {
            (0..c.artists)
                .flat_map(|a| (0..c.tracks_per_artist).map(move |t| (a, t)))
                .map(|(a, t)| (format!("{}-t{t:02}", artist_id(c.code, a)), artist_id(c.code, a)))
                .collect()
        })
        .collect();
    let local_pools: Vec<Pool> = country_tracks
        .iter()
        .map(|tracks| Pool::new(tracks.clone(), config.popularity_skew))
        .collect();
    let foreign_pools: Vec<Pool> = (0..config.countries.len())
        .map(|i| {
            let tracks = country_tracks
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, t)| t.iter().cloned())
                .collect();
            Pool::new(tracks, config.popularity_skew)
        })
        .collect();

    let mut labels = LabelTable::new();
    for c in &config.countries {
        for a in 0..c.artists {
            let mut keep = |source| rng.random_bool(config.label_coverage.get(source)).then_some(c.code);
            let entry = ArtistLabels {
                musicbrainz: keep(LabelSource::MusicBrainz),
                activity: keep(LabelSource::Activity),
                origin: keep(LabelSource::Origin),
            };
            labels.insert(&artist_id(c.code, a), entry)?;
        }
    }

    let (lo, hi) = config.streams_per_user;
    let mut events = Vec::new();
    let mut ground_truth = Vec::new();
    for (ci, c) in config.countries.iter().enumerate() {
        for u in 0..c.users {
            let user_id = format!("{}-u{u:05}", c.code);
            let n = rng.random_range(lo..=hi);
            let mut local = 0usize;
            for s in 0..n {
                let is_local = rng.random_bool(c.locality);
                let pool = if is_local { &local_pools[ci] } else { &foreign_pools[ci] };
                let (track, artist) = pool.sample(&mut rng);
                local += usize::from(is_local);
                events.push(ListeningEvent {
                    user_id: user_id.clone(),
                    track_id: track.clone(),
                    artist_id: artist.clone(),
                    user_country: c.code,
                    timestamp: Some(s as i64),
                });
            }
            ground_truth.push((user_id, local as f64 / n as f64));
        }
    }
    ground_truth.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SyntheticCorpus {
        dataset: Dataset::from_events(events)?,
        labels,
        ground_truth,
    })
}

impl SyntheticCorpus {
    pub fn write_ground_truth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(GROUND_TRUTH_HEADER)?;
        for (user, fraction) in &self.ground_truth {
            w.write_record([user.as_str(), &fraction.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<ground truth>", e))?;
        Ok(())
    }

    /// Writes `events.csv`, `labels.csv` and `ground_truth.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(&path, e))
        };
        self.dataset.write_events_csv(create("events.csv")?)?;
        self.labels.write_csv(create("labels.csv")?)?;
        self.write_ground_truth_csv(create("ground_truth.csv")?)?;
        Ok(())
    }
}
