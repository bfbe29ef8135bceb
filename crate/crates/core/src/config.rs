//! Declarative experiment configuration (TOML).
//!
//! ```toml
//! dataset = "synthetic"          # tag written into every record
//! output_dir = "out"
//! events = "events.csv"          # with `labels`; or an inline [synth] table
//! labels = "labels.csv"
//! countries = ["FR", "DE"]       # default: every country in the data
//! variants = ["global", "local"]
//! sources = ["musicbrainz", "activity", "origin"]
//! policies = ["exclude_unlabeled", "count_as_non_local"]
//! runs = 20                      # seeds 0..runs, or an explicit `seeds` list
//! grid = [10, 15, 20]            # default 10..=100 step 5
//! histogram_bins = 10
//!
//! [protocol]
//! validation_fraction = 0.1
//! restrict_to_validation = false
//!
//! [models.itemknn]               # omit [models] to run both with defaults
//! shrink = 0.0
//! neighborhood_size = 100
//!
//! [models.neumf]
//! embedding_dim = 64
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bias::{default_seeds, ModelKind, ModelSpec, SweepGrid, SweepOptions, Variant, DEFAULT_RUNS};
use crate::corpus::Country;
use crate::error::{Error, Result};
use crate::itemknn::ItemKnnConfig;
use crate::locality::{LabelSource, UnlabeledPolicy};
use crate::neumf::NeuMfConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub itemknn: Option<ItemKnnConfig>,
    pub neumf: Option<NeuMfConfig>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            itemknn: Some(ItemKnnConfig::default()),
            neumf: Some(NeuMfConfig::default()),
        }
    }
}

impl ModelsConfig {
    /// Configured models in a fixed order.
    pub fn specs(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        if let Some(c) = self.itemknn {
            out.push(ModelSpec::ItemKnn(c));
        }
        if let Some(c) = &self.neumf {
            out.push(ModelSpec::NeuMf(c.clone()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub output_dir: PathBuf,
    pub events: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub countries: Option<Vec<Country>>,
    pub models: ModelsConfig,
    pub variants: Vec<Variant>,
    pub sources: Vec<LabelSource>,
    pub policies: Vec<UnlabeledPolicy>,
    pub runs: u64,
    pub seeds: Option<Vec<u64>>,
    pub grid: SweepGrid,
    pub histogram_bins: usize,
    pub protocol: SweepOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "dataset".into(),
            output_dir: "out".into(),
            events: None,
            labels: None,
            synth: None,
            countries: None,
            models: ModelsConfig::default(),
            variants: Variant::ALL.to_vec(),
            sources: LabelSource::ALL.to_vec(),
            policies: UnlabeledPolicy::ALL.to_vec(),
            runs: DEFAULT_RUNS,
            seeds: None,
            grid: SweepGrid::default(),
            histogram_bins: 10,
            protocol: SweepOptions::default(),
        }
    }
}

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource<'a> {
    Files { events: &'a Path, labels: &'a Path },
    Synthetic(&'a SynthConfig),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.events, &mut config.labels].into_iter().flatten() {
            *p = base.join(&*p);
        }
        config.output_dir = base.join(&config.output_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        match (&self.events, &self.labels, &self.synth) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            _ => return bad("give either both `events` and `labels` or a [synth] table"),
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.dataset.is_empty() || self.dataset.contains([',', '"', '\n', '/']) {
            return bad("`dataset` must be a non-empty tag without commas, quotes or slashes");
        }
        if matches!(&self.countries, Some(c) if c.is_empty()) {
            return bad("`countries` is empty");
        }
        if self.models.itemknn.is_none() && self.models.neumf.is_none() {
            return bad("no models configured");
        }
        if let Some(c) = &self.models.neumf {
            c.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.variants.is_empty() || self.sources.is_empty() || self.policies.is_empty() {
            return bad("`variants`, `sources` and `policies` must be non-empty");
        }
        if self.seeds().is_empty() {
            return bad("no seeds to run");
        }
        if self.histogram_bins == 0 {
            return bad("`histogram_bins` must be positive");
        }
        let f = self.protocol.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad("`protocol.validation_fraction` must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn input(&self) -> InputSource<'_> {
        match (&self.events, &self.labels, &self.synth) {
            (Some(events), Some(labels), _) => InputSource::Files { events, labels },
            (_, _, Some(s)) => InputSource::Synthetic(s),
            _ => unreachable!("validated config has an input"),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| default_seeds(self.runs))
    }

    /// Narrows the experiment to one country, model and/or seed.
    pub fn restrict(&mut self, country: Option<Country>, model: Option<ModelKind>, seed: Option<u64>) {
        if let Some(c) = country {
            self.countries = Some(vec![c]);
        }
        match model {
            Some(ModelKind::ItemKnn) => self.models.neumf = None,
            Some(ModelKind::NeuMf) => self.models.itemknn = None,
            None => {}
        }
        if let Some(s) = seed {
            self.seeds = Some(vec![s]);
        }
    }
}
