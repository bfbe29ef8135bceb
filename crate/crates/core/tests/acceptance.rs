//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary is printed even
//! without `--nocapture`. Set `LOCALBIAS_DEEZER_DIR` to a directory holding
//! the released `events.csv` and `labels.csv` to also check the France
//! coverage row.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use localbias::bias::{self, ModelSpec, SweepGrid, SweepOptions, Variant};
use localbias::config::ExperimentConfig;
use localbias::eval::{self, Recommender, UserQuery};
use localbias::itemknn::{self, ItemKnnConfig};
use localbias::locality::{coverage_report, user_local_counts, LabelSource, TrackCountries, UnlabeledPolicy};
use localbias::neumf::{self, Gradients, NeuMfConfig, NeuMfParams, Sample};
use localbias::synth::{self, LabelCoverage, SynthConfig, SynthCountry};
use localbias::{runner, Country, Dataset, InteractionMatrix, LabelTable, ListeningEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn cc(code: &str) -> Country {
    code.parse().unwrap()
}

fn small_neumf() -> NeuMfConfig {
    NeuMfConfig {
        embedding_dim: 8,
        mlp_hidden_widths: vec![16, 8],
        batch_size: 256,
        max_epochs: 12,
        patience: 3,
        ..NeuMfConfig::default()
    }
}

/// A random corpus within 100 users and 200 tracks.
fn random_corpus(rng: &mut ChaCha8Rng) -> synth::SyntheticCorpus {
    let codes = ["AA", "BB", "CC"];
    let n = rng.random_range(2..=3);
    let countries = codes[..n]
        .iter()
        .map(|code| SynthCountry {
            code: cc(code),
            users: rng.random_range(3..=30),
            artists: rng.random_range(2..=20),
            tracks_per_artist: rng.random_range(1..=3),
            locality: rng.random::<f64>(),
        })
        .collect();
    let config = SynthConfig {
        countries,
        popularity_skew: rng.random_range(0.0..1.5),
        streams_per_user: (rng.random_range(1..=5), rng.random_range(5..=40)),
        label_coverage: LabelCoverage {
            musicbrainz: rng.random(),
            activity: rng.random(),
            origin: rng.random(),
        },
        seed: rng.random(),
    };
    synth::generate(&config).expect("random config is valid")
}

/// Per-user local share straight from artist ids and labels.
fn brute_share(
    tracks: &[u32],
    country: Country,
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> Option<f64> {
    let mut local = 0u64;
    let mut labeled = 0u64;
    for &t in tracks {
        if let Some(c) = labels.get(dataset.track_artist(t)).and_then(|l| l.get(source)) {
            labeled += 1;
            local += u64::from(c == country);
        }
    }
    let denom = match policy {
        UnlabeledPolicy::ExcludeUnlabeled => labeled,
        UnlabeledPolicy::CountAsNonLocal => tracks.len() as u64,
    };
    (denom > 0).then(|| local as f64 / denom as f64)
}

/// Mean of `L_rec(u) - L(u)` over users with both shares defined, querying
/// the model user by user.
#[allow(clippy::too_many_arguments)]
fn brute_bias(
    model: &dyn Recommender,
    fitted: &InteractionMatrix,
    users: &[u32],
    k: usize,
    dataset: &Dataset,
    labels: &LabelTable,
    source: LabelSource,
    policy: UnlabeledPolicy,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for &u in users {
        let country = dataset.user_country(u);
        let mut profile: Vec<u32> = dataset.user_streams(u).to_vec();
        profile.sort_unstable();
        profile.dedup();
        let row = fitted.user_ids().iter().position(|id| id == dataset.user_id(u));
        let list = model.recommend(UserQuery { row, profile: &profile }, k).unwrap();
        if list.is_empty() {
            continue;
        }
        let l = brute_share(dataset.user_streams(u), country, dataset, labels, source, policy);
        let l_rec = brute_share(&list, country, dataset, labels, source, policy);
        if let (Some(l), Some(l_rec)) = (l, l_rec) {
            sum += l_rec - l;
            n += 1;
        }
    }
    (if n == 0 { f64::NAN } else { sum / n as f64 }, n)
}

fn criterion_1(biases: &mut Vec<f64>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checks = 0;
    for case in 0..120 {
        let corpus = random_corpus(&mut rng);
        let ds = &corpus.dataset;
        ensure!(
            ds.user_count() <= 100 && ds.catalog_size() <= 200,
            "case {case}: corpus too large"
        );
        let all: Vec<u32> = (0..ds.user_count() as u32).collect();
        let matrix = ds.build_interactions(&all);
        let model = itemknn::fit(&matrix, ItemKnnConfig::default()).map_err(|e| format!("case {case}: {e}"))?;
        let country = ds.user_country(rng.random_range(0..ds.user_count() as u32));
        let users = ds.users_in(country);
        let k = rng.random_range(1..=30);
        for source in LabelSource::ALL {
            for policy in UnlabeledPolicy::ALL {
                let (want, n) = brute_bias(&model, &matrix, &users, k, ds, &corpus.labels, source, policy);
                match bias::dataset_bias(&users, &model, k, ds, &corpus.labels, source, policy) {
                    Ok(m) => {
                        ensure!(m.users_counted == n, "case {case}: counted {} vs {n}", m.users_counted);
                        ensure!(
                            (m.bias - want).abs() <= 1e-12,
                            "case {case} {source} {policy}: {} vs {want}",
                            m.bias
                        );
                        biases.push(m.bias);
                    }
                    Err(_) => ensure!(n == 0, "case {case}: pipeline failed but {n} users are countable"),
                }
                checks += 1;
            }
        }
    }
    Ok(format!("120 corpora, {checks} (source, policy) checks within 1e-12"))
}

/// Dense cosine ranking with ties broken by ascending track index.
fn brute_itemknn(rows: &[Vec<u32>], n_cols: usize, profile: &[u32], k: usize, shrink: f64, size: usize) -> Vec<u32> {
    let mut dense = vec![vec![0u32; n_cols]; rows.len()];
    for (r, row) in rows.iter().enumerate() {
        for &c in row {
            dense[r][c as usize] = 1;
        }
    }
    let col = |j: usize| dense.iter().map(|r| r[j]).collect::<Vec<_>>();
    let cols: Vec<Vec<u32>> = (0..n_cols).map(col).collect();
    let sim = |i: usize, j: usize| -> f64 {
        let co: u32 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        let ni: u32 = cols[i].iter().sum();
        let nj: u32 = cols[j].iter().sum();
        if co == 0 {
            return 0.0;
        }
        co as f64 / ((ni as f64 * nj as f64).sqrt() + shrink)
    };
    // Neighborhood of i: the `size` best j != i with positive similarity.
    let neighborhoods: Vec<HashMap<usize, f64>> = (0..n_cols)
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..n_cols)
                .filter(|&j| j != i)
                .map(|j| (j, sim(i, j)))
                .filter(|p| p.1 > 0.0)
                .collect();
            cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            cand.truncate(size);
            cand.into_iter().collect()
        })
        .collect();
    let mut scored: Vec<(u32, f64)> = (0..n_cols as u32)
        .filter(|t| !profile.contains(t))
        .map(|t| {
            let mut s = 0.0;
            for &i in profile {
                if let Some(v) = neighborhoods[i as usize].get(&(t as usize)) {
                    s += v;
                }
            }
            (t, s)
        })
        .filter(|p| p.1 > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|p| p.0).collect()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = 0;
    for case in 0..150 {
        let n_rows = rng.random_range(1..=30);
        let n_cols = rng.random_range(2..=50);
        let density = rng.random_range(0.05..0.4);
        let rows: Vec<Vec<u32>> = (0..n_rows)
            .map(|_| (0..n_cols as u32).filter(|_| rng.random_bool(density)).collect())
            .collect();
        let Ok(matrix) = InteractionMatrix::from_rows(n_cols, &rows) else {
            return Err(format!("case {case}: matrix rejected"));
        };
        if matrix.nnz() == 0 {
            continue;
        }
        let shrink = if case % 3 == 0 { 0.0 } else { rng.random_range(0.0..5.0) };
        let size = if case % 4 == 0 { rng.random_range(1..=5) } else { 100 };
        let config = ItemKnnConfig {
            shrink,
            neighborhood_size: size,
        };
        let model = itemknn::fit(&matrix, config).map_err(|e| e.to_string())?;
        for (r, row) in rows.iter().enumerate() {
            let k = rng.random_range(1..=n_cols);
            let got = model
                .recommend(
                    UserQuery {
                        row: Some(r),
                        profile: row,
                    },
                    k,
                )
                .map_err(|e| e.to_string())?;
            let want = brute_itemknn(&rows, n_cols, row, k, shrink, size);
            ensure!(got == want, "case {case} row {r}: {got:?} vs {want:?}");
            queries += 1;
        }
    }
    Ok(format!("150 matrices, {queries} rankings identical"))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for rate in [0.0, 0.3] {
        let mut p = NeuMfParams::init(5, 6, 4, &[8, 4], 3).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let normal = Normal::new(0.0, 0.5).unwrap();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
        p.out_bias = normal.sample(&mut rng);
        let samples: Vec<Sample> = (0..5u32)
            .flat_map(|u| (0..6u32).map(move |i| (u, i)))
            .map(|(row, item)| Sample {
                row,
                item,
                label: f64::from(u8::from(rng.random_bool(0.4))),
            })
            .collect();
        let eval = |q: &NeuMfParams, g: &mut Gradients| {
            let mut masks = ChaCha8Rng::seed_from_u64(7);
            q.loss_and_gradient(&samples, Some((rate, &mut masks)), g)
        };
        let mut g = Gradients::for_params(&p);
        eval(&p, &mut g);
        let analytic = g.to_dense(&p);
        let mut scratch = Gradients::for_params(&p);
        let h = 1e-5;
        let n = p.tensors().len();
        for t in 0..=n {
            let len = if t == n { 1 } else { p.tensors()[t].len() };
            for k in 0..len {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                if t == n {
                    plus.out_bias += h;
                    minus.out_bias -= h;
                } else {
                    plus.tensors_mut()[t][k] += h;
                    minus.tensors_mut()[t][k] -= h;
                }
                let numeric = (eval(&plus, &mut scratch) - eval(&minus, &mut scratch)) / (2.0 * h);
                let a = if t == n {
                    analytic.out_bias
                } else {
                    analytic.tensors()[t][k]
                };
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    Ok(format!(
        "{checked} parameters (dropout 0 and 0.3), max relative error {worst:.2e}"
    ))
}

fn criterion_4() -> Outcome {
    let corpus = synth::generate(&SynthConfig::two_block(50, 100, 4)).map_err(|e| e.to_string())?;
    let ds = &corpus.dataset;
    ensure!(ds.user_count() == 100, "{} users", ds.user_count());
    let split = ds.split_validation(0.1, 4).map_err(|e| e.to_string())?;
    let protocol = eval::hold_out(ds, &split.validation, 40);
    let config = NeuMfConfig {
        seed: 4,
        ..NeuMfConfig::default()
    };
    let (model, _) =
        neumf::train(&ds.build_interactions(&split.train), Some(&protocol), &config).map_err(|e| e.to_string())?;
    let mrr = eval::validate(&model, &protocol, 10).map_err(|e| e.to_string())?;
    // Random ranking over each user's unseen candidates.
    let n = ds.catalog_size();
    let harmonic: f64 = (1..=10).map(|r| 1.0 / r as f64).sum();
    let random = protocol
        .entries
        .iter()
        .map(|e| harmonic / (n - e.profile.len()) as f64)
        .sum::<f64>()
        / protocol.len() as f64;
    let ratio = mrr / random;
    ensure!(ratio >= 5.0, "MRR@10 {mrr:.4} is only {ratio:.2}x random {random:.4}");
    Ok(format!("MRR@10 {mrr:.4} = {ratio:.1}x random {random:.4}"))
}

/// One listener per entry of `listened`; `forced` is the list every user gets.
struct Forced(Vec<u32>);

impl Recommender for Forced {
    fn recommend(&self, query: UserQuery<'_>, k: usize) -> localbias::Result<Vec<u32>> {
        Ok(self
            .0
            .iter()
            .copied()
            .filter(|t| !query.profile.contains(t))
            .take(k)
            .collect())
    }
}

fn two_country_corpus() -> (Dataset, LabelTable) {
    let mut events = Vec::new();
    let mut labels = LabelTable::new();
    for (country, artist) in [("AA", "a-art"), ("BB", "b-art")] {
        for t in 0..4 {
            labels
                .insert(
                    &format!("{artist}{t}"),
                    localbias::locality::ArtistLabels {
                        activity: Some(cc(country)),
                        ..Default::default()
                    },
                )
                .unwrap();
        }
    }
    // AA users hear only AA tracks, BB users only BB tracks.
    for (country, artist) in [("AA", "a-art"), ("BB", "b-art")] {
        for u in 0..3 {
            for t in 0..2 {
                events.push(ListeningEvent {
                    user_id: format!("{country}-u{u}"),
                    track_id: format!("{artist}{t}-t"),
                    artist_id: format!("{artist}{t}"),
                    user_country: cc(country),
                    timestamp: None,
                });
            }
        }
    }
    // Unheard-by-owner tracks so both catalogs are recommendable.
    for (country, artist) in [("AA", "b-art"), ("BB", "a-art")] {
        for t in 2..4 {
            events.push(ListeningEvent {
                user_id: format!("{country}-x"),
                track_id: format!("{artist}{t}-t"),
                artist_id: format!("{artist}{t}"),
                user_country: cc(country),
                timestamp: None,
            });
        }
    }
    (Dataset::from_events(events).unwrap(), labels)
}

fn criterion_5(biases: &[f64]) -> Outcome {
    let (ds, labels) = two_country_corpus();
    let tracks_of = |prefix: &str| -> Vec<u32> {
        (0..ds.catalog_size() as u32)
            .filter(|&t| ds.track_id(t).starts_with(prefix))
            .collect()
    };
    // AA users: L = 1, recommended only BB tracks, so -1.
    let aa: Vec<u32> = (0..3).map(|u| ds.user_index(&format!("AA-u{u}")).unwrap()).collect();
    let minus = bias::dataset_bias(
        &aa,
        &Forced(tracks_of("b-art")),
        2,
        &ds,
        &labels,
        LabelSource::Activity,
        UnlabeledPolicy::ExcludeUnlabeled,
    )
    .map_err(|e| e.to_string())?;
    // The BB-x user only heard AA tracks (L = 0) and gets BB tracks, so +1.
    let bx = vec![ds.user_index("BB-x").unwrap()];
    let plus = bias::dataset_bias(
        &bx,
        &Forced(tracks_of("b-art")),
        2,
        &ds,
        &labels,
        LabelSource::Activity,
        UnlabeledPolicy::ExcludeUnlabeled,
    )
    .map_err(|e| e.to_string())?;
    ensure!(minus.bias == -1.0, "expected exactly -1, got {}", minus.bias);
    ensure!(plus.bias == 1.0, "expected exactly +1, got {}", plus.bias);
    let out = biases.iter().filter(|b| !(-1.0..=1.0).contains(*b)).count();
    ensure!(
        !biases.is_empty() && out == 0,
        "{out} of {} biases outside [-1, 1]",
        biases.len()
    );
    Ok(format!(
        "extremes -1 and +1 exact; {} measured biases in [-1, 1]",
        biases.len()
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rows = 0;
    for case in 0..100 {
        let corpus = random_corpus(&mut rng);
        let ds = &corpus.dataset;
        for source in LabelSource::ALL {
            for row in coverage_report(ds, &corpus.labels, source).rows {
                // Recount from the raw streams.
                let (mut total, mut labeled, mut local) = (0u64, 0u64, 0u64);
                for s in ds.streams().iter().filter(|s| ds.user_country(s.user) == row.country) {
                    total += 1;
                    if let Some(c) = corpus.labels.label(ds.track_artist(s.track), source) {
                        labeled += 1;
                        local += u64::from(c == row.country);
                    }
                }
                let (lf, lal, la) = (row.labeled_fraction(), row.local_among_labeled(), row.local_among_all());
                ensure!(
                    (la.numerator, la.denominator, lf.numerator, lal.denominator) == (local, total, labeled, labeled),
                    "case {case} {}/{source}: counts differ from recount",
                    row.country
                );
                // local/total == (labeled/total) * (local/labeled), cross-multiplied.
                let lhs = la.numerator as u128 * lf.denominator as u128 * lal.denominator as u128;
                let rhs = lf.numerator as u128 * lal.numerator as u128 * la.denominator as u128;
                ensure!(
                    labeled == 0 || lhs == rhs,
                    "case {case} {}/{source}: identity broken",
                    row.country
                );
                ensure!(labeled > 0 || local == 0, "case {case}: local streams without labels");
                rows += 1;
            }
        }
    }
    let synthetic = format!("identity exact on {rows} rows of 100 corpora");
    let Some(dir) = std::env::var_os("LOCALBIAS_DEEZER_DIR").map(PathBuf::from) else {
        return Ok(format!(
            "{synthetic}; released-data row SKIPPED (LOCALBIAS_DEEZER_DIR unset)"
        ));
    };
    let ds = localbias::corpus::read_events_file(&dir.join("events.csv")).map_err(|e| e.to_string())?;
    let labels = localbias::corpus::read_labels_file(&dir.join("labels.csv")).map_err(|e| e.to_string())?;
    let report = coverage_report(&ds, &labels, LabelSource::Activity);
    let fr = report
        .row(cc("FR"), LabelSource::Activity)
        .ok_or("no FR streams in released data")?;
    let pct = |r: localbias::locality::Ratio| 100.0 * r.value();
    let got = [
        pct(fr.labeled_fraction()),
        pct(fr.local_among_labeled()),
        pct(fr.local_among_all()),
    ];
    for (g, want) in got.iter().zip([76.0, 50.0, 38.0]) {
        ensure!((g - want).abs() <= 1.0, "France/activity {got:.1?} vs 76/50/38");
    }
    Ok(format!(
        "{synthetic}; France/activity {:.1}/{:.1}/{:.1}",
        got[0], got[1], got[2]
    ))
}

fn protocol_corpus(seed: u64) -> synth::SyntheticCorpus {
    let country = |code: &str, locality| SynthCountry {
        code: cc(code),
        users: 30,
        artists: 120,
        tracks_per_artist: 2,
        locality,
    };
    synth::generate(&SynthConfig {
        countries: vec![country("AA", 0.7), country("BB", 0.2)],
        label_coverage: LabelCoverage::uniform(0.8),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn criterion_7(biases: &mut Vec<f64>) -> Outcome {
    let defaults =
        ExperimentConfig::from_toml("events = \"e.csv\"\nlabels = \"l.csv\"\n").map_err(|e| e.to_string())?;
    let want_k: Vec<usize> = (10..=100).step_by(5).collect();
    ensure!(
        defaults.grid.values() == want_k.as_slice(),
        "default grid {:?}",
        defaults.grid.values()
    );
    ensure!(
        defaults.seeds() == (0..20).collect::<Vec<u64>>(),
        "default seeds {:?}",
        defaults.seeds()
    );

    // Full default sweep for ItemKNN through the driver.
    let corpus = protocol_corpus(7);
    let grid = SweepGrid::default();
    let seeds = defaults.seeds();
    let spec = ModelSpec::ItemKnn(ItemKnnConfig::default());
    let records = bias::sweep(
        "acc",
        &corpus.dataset,
        &corpus.labels,
        cc("AA"),
        &spec,
        Variant::Global,
        LabelSource::Activity,
        UnlabeledPolicy::CountAsNonLocal,
        &grid,
        &seeds,
        &SweepOptions::default(),
    );
    ensure!(records.len() == 19 * 20, "{} records", records.len());
    biases.extend(records.iter().filter_map(|r| r.bias));
    let agg = bias::aggregate(&records);
    ensure!(agg.len() == 19, "{} aggregate rows", agg.len());
    ensure!(
        agg.iter().all(|a| a.n_runs == 20 && a.std == Some(0.0)),
        "ItemKNN std not exactly 0"
    );

    // Prefix consistency for both models.
    let ds = &corpus.dataset;
    let all: Vec<u32> = (0..ds.user_count() as u32).collect();
    let knn = itemknn::fit(&ds.build_interactions(&all), ItemKnnConfig::default()).map_err(|e| e.to_string())?;
    let split = ds.split_validation(0.1, 7).map_err(|e| e.to_string())?;
    let (nmf, _) =
        neumf::train(&ds.build_interactions(&split.train), None, &small_neumf()).map_err(|e| e.to_string())?;
    let users = ds.users_in(cc("AA"));
    for (name, model) in [
        ("itemknn", &knn as &dyn Recommender),
        ("neumf", &nmf as &dyn Recommender),
    ] {
        let long = bias::recommend_lists(model, ds, &users, 100).map_err(|e| e.to_string())?;
        for &k in &want_k {
            let fresh = bias::recommend_lists(model, ds, &users, k).map_err(|e| e.to_string())?;
            for ((_, l), (_, f)) in long.lists.iter().zip(&fresh.lists) {
                ensure!(
                    &l[..k.min(l.len())] == f.as_slice(),
                    "{name} K={k}: prefix differs from fresh list"
                );
            }
            for source in LabelSource::ALL {
                let tracks = TrackCountries::resolve(ds, &corpus.labels, source);
                let listened = user_local_counts(ds, &tracks);
                for policy in UnlabeledPolicy::ALL {
                    let prefix = bias::bias_from_lists(&long, k, ds, &tracks, &listened, policy)
                        .map(|m| m.bias)
                        .ok();
                    let direct = bias::dataset_bias(&users, model, k, ds, &corpus.labels, source, policy)
                        .map(|m| m.bias)
                        .ok();
                    ensure!(
                        prefix == direct,
                        "{name} K={k} {source} {policy}: {prefix:?} vs {direct:?}"
                    );
                }
            }
        }
    }
    Ok("19 K values x 20 seeds, ItemKNN std 0, prefixes equal fresh queries for both models".into())
}

/// `(user id, recommended track ids)` per AA user, for comparing fits whose
/// index spaces differ.
fn lists_by_id(model: &dyn Recommender, ds: &Dataset) -> Vec<(String, Vec<String>)> {
    let users = ds.users_in(cc("AA"));
    let lists = bias::recommend_lists(model, ds, &users, 20).unwrap();
    lists
        .lists
        .into_iter()
        .map(|(u, l)| {
            (
                ds.user_id(u).to_owned(),
                l.into_iter().map(|t| ds.track_id(t).to_owned()).collect(),
            )
        })
        .collect()
}

fn criterion_8() -> Outcome {
    for seed in [8, 18] {
        let corpus = protocol_corpus(seed);
        let full = &corpus.dataset;
        let only_aa = Dataset::from_events(full.events().filter(|e| e.user_country == cc("AA"))).unwrap();
        let specs = [
            ModelSpec::ItemKnn(ItemKnnConfig::default()),
            ModelSpec::NeuMf(small_neumf()),
        ];
        for spec in &specs {
            let a = bias::fit(
                &bias::population(full, Variant::Local, cc("AA")),
                spec,
                seed,
                &SweepOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            let b = bias::fit(
                &bias::population(&only_aa, Variant::Local, cc("AA")),
                spec,
                seed,
                &SweepOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            let pa = bias::population(full, Variant::Local, cc("AA"));
            ensure!(
                lists_by_id(a.model.as_recommender(), &pa) == lists_by_id(b.model.as_recommender(), &only_aa),
                "{} seed {seed}: lists depend on other countries",
                spec.kind()
            );
            let grid = SweepGrid::new(vec![10, 20]).unwrap();
            let ra = bias::sweep(
                "x",
                full,
                &corpus.labels,
                cc("AA"),
                spec,
                Variant::Local,
                LabelSource::Origin,
                UnlabeledPolicy::ExcludeUnlabeled,
                &grid,
                &[seed],
                &SweepOptions::default(),
            );
            let rb = bias::sweep(
                "x",
                &only_aa,
                &corpus.labels,
                cc("AA"),
                spec,
                Variant::Local,
                LabelSource::Origin,
                UnlabeledPolicy::ExcludeUnlabeled,
                &grid,
                &[seed],
                &SweepOptions::default(),
            );
            ensure!(ra == rb, "{} seed {seed}: bias records differ", spec.kind());
        }
    }
    Ok("local ItemKNN and NeuMF identical with and without foreign events (2 corpora)".into())
}

fn criterion_9() -> Outcome {
    // All of AA's streams are local; the local model only knows AA tracks.
    let country = |code: &str, locality| SynthCountry {
        code: cc(code),
        users: 25,
        artists: 200,
        tracks_per_artist: 1,
        locality,
    };
    let corpus = synth::generate(&SynthConfig {
        countries: vec![country("AA", 1.0), country("BB", 0.5)],
        label_coverage: LabelCoverage::uniform(1.0),
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let grid = SweepGrid::new(vec![5, 10, 20]).unwrap();
    for spec in [
        ModelSpec::ItemKnn(ItemKnnConfig::default()),
        ModelSpec::NeuMf(small_neumf()),
    ] {
        for policy in UnlabeledPolicy::ALL {
            let records = bias::sweep(
                "x",
                &corpus.dataset,
                &corpus.labels,
                cc("AA"),
                &spec,
                Variant::Local,
                LabelSource::MusicBrainz,
                policy,
                &grid,
                &[0, 1],
                &SweepOptions::default(),
            );
            ensure!(
                records.iter().all(|r| r.bias == Some(0.0)),
                "{} {policy}: {:?}",
                spec.kind(),
                records.iter().map(|r| r.bias).collect::<Vec<_>>()
            );
        }
    }

    // Non-local listeners forced onto local tracks.
    let corpus = synth::generate(&SynthConfig {
        countries: vec![country("AA", 0.0), country("BB", 0.0)],
        label_coverage: LabelCoverage::uniform(1.0),
        seed: 19,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = &corpus.dataset;
    let aa_tracks: Vec<u32> = (0..ds.catalog_size() as u32)
        .filter(|&t| corpus.labels.label(ds.track_artist(t), LabelSource::MusicBrainz) == Some(cc("AA")))
        .collect();
    let users = ds.users_in(cc("AA"));
    for policy in UnlabeledPolicy::ALL {
        let m = bias::dataset_bias(
            &users,
            &Forced(aa_tracks.clone()),
            10,
            ds,
            &corpus.labels,
            LabelSource::MusicBrainz,
            policy,
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            m.bias == 1.0 && m.users_counted == users.len(),
            "forced stub {policy}: {}",
            m.bias
        );
    }
    Ok("locality 1 + local model: bias 0 exactly; locality 0 + all-local stub: bias +1 exactly".into())
}

fn criterion_10() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = |out: &str| -> ExperimentConfig {
        let text = format!(
            "dataset = \"det\"\noutput_dir = \"{out}\"\nseeds = [0, 1]\ngrid = [10, 25, 40]\n\
             [synth]\nseed = 10\ncountries = [{{ code = \"AA\", users = 20, artists = 15, locality = 0.6 }}, \
             {{ code = \"BB\", users = 20, artists = 15, locality = 0.3 }}]\n\
             [models.itemknn]\n[models.neumf]\nembedding_dim = 8\nmlp_hidden_widths = [16, 8]\nmax_epochs = 6\npatience = 2\n"
        );
        let path = root.path().join(format!("{out}.toml"));
        std::fs::write(&path, text).unwrap();
        ExperimentConfig::load(&path).unwrap()
    };
    let (a, b) = (config("a"), config("b"));
    runner::cmd_run(&a, 1).map_err(|e| e.to_string())?;
    runner::cmd_run(&b, 3).map_err(|e| e.to_string())?;
    let read = |c: &ExperimentConfig, f: &str| std::fs::read(c.output_dir.join(f)).unwrap();
    let records = read(&a, runner::RECORDS_FILE);
    ensure!(
        records == read(&b, runner::RECORDS_FILE),
        "records.csv differs between runs"
    );
    ensure!(
        read(&a, runner::AGGREGATE_FILE) == read(&b, runner::AGGREGATE_FILE),
        "aggregate.csv differs between runs"
    );
    Ok(format!(
        "two runs (1 and 3 workers), {} bytes of records identical",
        records.len()
    ))
}

fn main() -> ExitCode {
    // Keep libtest's flags from confusing anyone reading the output.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut biases = Vec::new();
    let mut biases_7 = Vec::new();
    type Check<'a> = (u32, &'a str, Duration, Box<dyn FnOnce() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        (
            1,
            "bias oracle equivalence",
            Duration::from_secs(60),
            Box::new(|| criterion_1(&mut biases)),
        ),
        (2, "itemknn oracle", Duration::from_secs(60), Box::new(criterion_2)),
        (
            3,
            "neumf gradient check",
            Duration::from_secs(10),
            Box::new(criterion_3),
        ),
        (4, "learning sanity", Duration::from_secs(300), Box::new(criterion_4)),
        (
            7,
            "protocol fidelity",
            Duration::from_secs(300),
            Box::new(|| criterion_7(&mut biases_7)),
        ),
        (6, "coverage identity", Duration::from_secs(300), Box::new(criterion_6)),
        (8, "variant separation", Duration::from_secs(300), Box::new(criterion_8)),
        (
            9,
            "closed-world direction",
            Duration::from_secs(300),
            Box::new(criterion_9),
        ),
        (10, "determinism", Duration::from_secs(300), Box::new(criterion_10)),
    ];
    let mut results: Vec<(u32, String)> = Vec::new();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, limit: Duration, run: Box<dyn FnOnce() -> Outcome + '_>| {
        if filter
            .as_deref()
            .is_some_and(|f| !name.contains(f) && f != n.to_string())
        {
            return;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {took:.1?}, limit {limit:?}")),
            Err(e) => ("FAIL", e),
        };
        failed += usize::from(status == "FAIL");
        let line = format!("criterion {n:>2} [{status}] {name} ({took:.1?}): {detail}");
        println!("{line}");
        results.push((n, line));
    };
    for (n, name, limit, run) in checks {
        report(n, name, limit, run);
    }
    biases.extend(biases_7);
    report(
        5,
        "bias range and extremes",
        Duration::from_secs(10),
        Box::new(|| criterion_5(&biases)),
    );

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    for (_, line) in &results {
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all {} criteria passed", results.len());
        ExitCode::SUCCESS
    }
}
