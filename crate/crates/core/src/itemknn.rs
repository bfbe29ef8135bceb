//! Item-based nearest-neighbour recommender with shrunk cosine similarity.
//!
//! For binary interaction columns `v_i`, `v_j` the similarity is
//! `<v_i, v_j> / (|v_i| |v_j| + shrink)`. Each item keeps its
//! `neighborhood_size` most similar items; a user's score for track `t` is
//! the sum of `sim(i, t)` over the user's items `i` that retained `t`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use crate::corpus::InteractionMatrix;
use crate::error::{Error, Result};
use crate::eval::{Recommender, UserQuery};

pub const DEFAULT_NEIGHBORHOOD_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItemKnnConfig {
    pub shrink: f64,
    pub neighborhood_size: usize,
}

impl Default for ItemKnnConfig {
    fn default() -> Self {
        ItemKnnConfig {
            shrink: 0.0,
            neighborhood_size: DEFAULT_NEIGHBORHOOD_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemKnnModel {
    config: ItemKnnConfig,
    /// Per item: retained `(neighbor, sim)`, by descending sim then index.
    neighbors: Vec<Vec<(u32, f64)>>,
    train: InteractionMatrix,
}

/// Descending score, then ascending index.
pub(crate) fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Shrunk cosine between binary vectors with the given support sizes.
pub fn shrunk_cosine(co_count: u32, count_i: u32, count_j: u32, shrink: f64) -> f64 {
    let norms = (count_i as f64 * count_j as f64).sqrt();
    co_count as f64 / (norms + shrink)
}

fn item_neighbors(
    item: usize,
    columns: &[Vec<u32>],
    train: &InteractionMatrix,
    config: &ItemKnnConfig,
    co_counts: &mut [u32],
    touched: &mut Vec<u32>,
) -> Vec<(u32, f64)> {
    for &row in &columns[item] {
        for &j in train.row(row as usize) {
            if j as usize == item {
                continue;
            }
            if co_counts[j as usize] == 0 {
                touched.push(j);
            }
            co_counts[j as usize] += 1;
        }
    }
    let count_i = columns[item].len() as u32;
    let mut sims: Vec<(u32, f64)> = touched
        .iter()
        .map(|&j| {
            let count_j = columns[j as usize].len() as u32;
            (j, shrunk_cosine(co_counts[j as usize], count_i, count_j, config.shrink))
        })
        .collect();
    for &j in touched.iter() {
        co_counts[j as usize] = 0;
    }
    touched.clear();
    sims.sort_unstable_by(rank_order);
    sims.truncate(config.neighborhood_size);
    sims
}

/// Fits similarities on the train matrix.
pub fn fit(train: &InteractionMatrix, config: ItemKnnConfig) -> Result<ItemKnnModel> {
    if !(config.shrink >= 0.0 && config.shrink.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "shrink must be >= 0, got {}",
            config.shrink
        )));
    }
    if config.neighborhood_size == 0 {
        return Err(Error::InvalidArgument("neighborhood_size must be positive".into()));
    }
    if train.nnz() == 0 {
        return Err(Error::InvalidArgument("interaction matrix has no positives".into()));
    }
    let columns = train.columns();
    let n = train.n_cols();

    #[cfg(feature = "parallel")]
    let neighbors = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0u32; n], Vec::new()),
                |(co, touched), i| item_neighbors(i, &columns, train, &config, co, touched),
            )
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let neighbors = {
        let (mut co, mut touched) = (vec![0u32; n], Vec::new());
        (0..n)
            .map(|i| item_neighbors(i, &columns, train, &config, &mut co, &mut touched))
            .collect()
    };

    Ok(ItemKnnModel {
        config,
        neighbors,
        train: train.clone(),
    })
}

impl ItemKnnModel {
    pub fn config(&self) -> ItemKnnConfig {
        self.config
    }

    pub fn train_matrix(&self) -> &InteractionMatrix {
        &self.train
    }

    pub fn neighbors(&self, item: u32) -> &[(u32, f64)] {
        &self.neighbors[item as usize]
    }

    /// Retained similarity of `j` in `i`'s neighborhood, 0 otherwise.
    pub fn similarity(&self, i: u32, j: u32) -> f64 {
        self.neighbors[i as usize]
            .iter()
            .find(|&&(n, _)| n == j)
            .map_or(0.0, |&(_, s)| s)
    }

    /// Top-`k` unseen tracks for a train user identified by id.
    pub fn recommend_user(&self, user_id: &str, k: usize) -> Result<Vec<u32>> {
        let row = self
            .train
            .row_of_id(user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?;
        self.recommend_profile(self.train.row(row), k)
    }

    /// Top-`k` tracks scored from an ascending, duplicate-free profile.
    /// Only positively scored unseen tracks are returned, so the list may be
    /// shorter than `k`.
    pub fn recommend_profile(&self, profile: &[u32], k: usize) -> Result<Vec<u32>> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        debug_assert!(profile.windows(2).all(|w| w[0] < w[1]));
        // Per candidate, terms are added in ascending profile order.
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for &i in profile {
            let Some(neighbors) = self.neighbors.get(i as usize) else {
                continue;
            };
            for &(t, s) in neighbors {
                *scores.entry(t).or_insert(0.0) += s;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores
            .into_iter()
            .filter(|&(t, s)| s > 0.0 && profile.binary_search(&t).is_err())
            .collect();
        ranked.sort_unstable_by(rank_order);
        ranked.truncate(k);
        Ok(ranked.into_iter().map(|(t, _)| t).collect())
    }

    /// `item_i,item_j,sim` for every retained pair, items by track id.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let ids = self.train.track_ids();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item_i", "item_j", "sim"])?;
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, s) in list {
                w.write_record([ids[i].as_str(), ids[j as usize].as_str(), &s.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<itemknn>", e))?;
        Ok(())
    }
}

impl Recommender for ItemKnnModel {
    fn recommend(&self, query: UserQuery<'_>, k: usize) -> Result<Vec<u32>> {
        self.recommend_profile(query.profile, k)
    }

    fn fitted_on(&self) -> Option<&InteractionMatrix> {
        Some(&self.train)
    }
}
