//! Browser demo: generate a synthetic corpus, inspect label coverage and
//! per-user local shares, and sweep ItemKNN bias over K.
//!
//! Every method returns a JSON string. The plain-Rust `*_json` functions do
//! the work so they can be tested natively.

use localbias::bias::{self, ModelSpec, RunStatus, SweepGrid, SweepOptions, Variant};
use localbias::itemknn::ItemKnnConfig;
use localbias::locality::{self, LabelSource, UnlabeledPolicy};
use localbias::synth::{self, SynthConfig, SyntheticCorpus};
use localbias::Country;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type Res<T> = std::result::Result<T, String>;

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Res<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| format!("{what}: {e}"))
}

pub fn generate_corpus(config_json: &str) -> Res<SyntheticCorpus> {
    let config: SynthConfig = serde_json::from_str(config_json).map_err(|e| format!("config: {e}"))?;
    synth::generate(&config).map_err(|e| e.to_string())
}

pub fn summary_json(corpus: &SyntheticCorpus) -> String {
    let ds = &corpus.dataset;
    let countries: Vec<Value> = ds
        .countries()
        .into_iter()
        .map(|c| json!({ "country": c.as_str(), "users": ds.users_in(c).len() }))
        .collect();
    json!({
        "events": ds.event_count(),
        "users": ds.user_count(),
        "tracks": ds.catalog_size(),
        "artists": corpus.labels.len(),
        "countries": countries,
    })
    .to_string()
}

/// Stream coverage for every (country, source) as fractions.
pub fn coverage_json(corpus: &SyntheticCorpus) -> String {
    let mut rows = Vec::new();
    for source in LabelSource::ALL {
        for row in locality::coverage_report(&corpus.dataset, &corpus.labels, source).rows {
            rows.push(json!({
                "country": row.country.as_str(),
                "source": source.as_str(),
                "labeled": row.labeled_fraction().value(),
                "local_among_labeled": row.local_among_labeled().value(),
                "local_among_all": row.local_among_all().value(),
            }));
        }
    }
    Value::Array(rows).to_string()
}

/// Per-country histograms of the users' local shares.
pub fn histograms_json(corpus: &SyntheticCorpus, source: &str, policy: &str, bins: usize) -> Res<String> {
    let source: LabelSource = parse("source", source)?;
    let policy: UnlabeledPolicy = parse("policy", policy)?;
    let hists =
        locality::local_histogram(&corpus.dataset, &corpus.labels, source, policy, bins).map_err(|e| e.to_string())?;
    let out: Vec<Value> = hists
        .iter()
        .map(|h| {
            json!({
                "country": h.country.as_str(),
                "counts": h.counts,
                "undefined_users": h.undefined_users,
            })
        })
        .collect();
    Ok(Value::Array(out).to_string())
}

/// ItemKNN bias at K = 10, 15, ..., 100 for one country.
pub fn bias_curve_json(
    corpus: &SyntheticCorpus,
    country: &str,
    variant: &str,
    source: &str,
    policy: &str,
) -> Res<String> {
    let country: Country = parse("country", country)?;
    let variant: Variant = parse("variant", variant)?;
    let source: LabelSource = parse("source", source)?;
    let policy: UnlabeledPolicy = parse("policy", policy)?;
    if corpus.dataset.users_in(country).is_empty() {
        return Err(format!("no users from {country}"));
    }
    let records = bias::sweep(
        "demo",
        &corpus.dataset,
        &corpus.labels,
        country,
        &ModelSpec::ItemKnn(ItemKnnConfig::default()),
        variant,
        source,
        policy,
        &SweepGrid::default(),
        &[0],
        &SweepOptions::default(),
    );
    let points: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "k": r.k,
                "bias": if r.status == RunStatus::Ok { r.bias } else { None },
                "users": r.users_counted,
            })
        })
        .collect();
    Ok(Value::Array(points).to_string())
}

/// A generated corpus held on the Rust side between calls.
#[wasm_bindgen]
pub struct Demo {
    corpus: SyntheticCorpus,
}

#[wasm_bindgen]
impl Demo {
    /// `config` is a synthetic corpus config as JSON.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Demo, JsError> {
        let corpus = generate_corpus(config).map_err(|e| JsError::new(&e))?;
        Ok(Demo { corpus })
    }

    pub fn summary(&self) -> String {
        summary_json(&self.corpus)
    }

    pub fn coverage(&self) -> String {
        coverage_json(&self.corpus)
    }

    pub fn histograms(&self, source: &str, policy: &str, bins: usize) -> Result<String, JsError> {
        histograms_json(&self.corpus, source, policy, bins).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = biasCurve)]
    pub fn bias_curve(&self, country: &str, variant: &str, source: &str, policy: &str) -> Result<String, JsError> {
        bias_curve_json(&self.corpus, country, variant, source, policy).map_err(|e| JsError::new(&e))
    }
}
