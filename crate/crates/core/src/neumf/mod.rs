//! Neural matrix factorization (GMF and MLP branches fused by a sigmoid
//! output) trained on implicit feedback with sampled negatives.

mod adam;
mod network;

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use network::{loss, sigmoid, Dense, Dropout, Gradients, NeuMfParams, Sample, PREDICTION_CLAMP};

use crate::corpus::InteractionMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, Recommender, UserQuery, ValidationProtocol};
use crate::itemknn::rank_order;

/// Cut-off of the validation metric used for early stopping.
pub const VALIDATION_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuMfConfig {
    pub embedding_dim: usize,
    pub mlp_hidden_widths: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub max_epochs: usize,
    pub negatives_per_positive: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for NeuMfConfig {
    fn default() -> Self {
        NeuMfConfig {
            embedding_dim: 64,
            mlp_hidden_widths: vec![128, 64, 32],
            learning_rate: 0.001,
            batch_size: 512,
            dropout_rate: 0.1,
            max_epochs: 300,
            negatives_per_positive: 4,
            patience: 10,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl NeuMfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("neumf: {m}")));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.mlp_hidden_widths.is_empty() || self.mlp_hidden_widths.contains(&0) {
            return bad("mlp_hidden_widths must be non-empty positive widths");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.negatives_per_positive == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs, negatives_per_positive and patience must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mrr_at_10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Trained parameters plus what is needed to serve recommendations.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuMfModel {
    params: NeuMfParams,
    train: InteractionMatrix,
    fold_in_gmf: Vec<f64>,
    fold_in_mlp: Vec<f64>,
}

fn mean_rows(table: &[f64], dim: usize) -> Vec<f64> {
    let n = table.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in table.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

impl NeuMfModel {
    pub fn new(params: NeuMfParams, train: InteractionMatrix) -> Result<Self> {
        if params.n_users != train.n_rows() || params.n_items != train.n_cols() {
            return Err(Error::InvalidArgument(format!(
                "parameters shaped {}x{} do not match a {}x{} matrix",
                params.n_users,
                params.n_items,
                train.n_rows(),
                train.n_cols()
            )));
        }
        Ok(NeuMfModel {
            fold_in_gmf: mean_rows(&params.gmf_user, params.dim),
            fold_in_mlp: mean_rows(&params.mlp_user, params.dim),
            params,
            train,
        })
    }

    pub fn params(&self) -> &NeuMfParams {
        &self.params
    }

    pub fn train_matrix(&self) -> &InteractionMatrix {
        &self.train
    }

    fn user_vectors(&self, row: Option<usize>) -> Result<(&[f64], &[f64])> {
        match row {
            Some(r) if r >= self.params.n_users => Err(Error::InvalidArgument(format!("user row {r} out of range"))),
            Some(r) => Ok((
                self.params.row(&self.params.gmf_user, r),
                self.params.row(&self.params.mlp_user, r),
            )),
            // Users unseen in training get the mean train-user embedding.
            None => Ok((&self.fold_in_gmf, &self.fold_in_mlp)),
        }
    }

    /// Scores of every unseen track for the query, unsorted.
    pub fn score_unseen(&self, query: UserQuery<'_>) -> Result<Vec<(u32, f64)>> {
        let (gmf, mlp) = self.user_vectors(query.row)?;
        let candidates: Vec<u32> = (0..self.params.n_items as u32)
            .filter(|t| query.profile.binary_search(t).is_err())
            .collect();
        let scores = self.params.score_items(gmf, mlp, &candidates);
        Ok(candidates.into_iter().zip(scores).collect())
    }
}

impl Recommender for NeuMfModel {
    /// Exactly `k` unseen tracks; fails when the catalog has fewer.
    fn recommend(&self, query: UserQuery<'_>, k: usize) -> Result<Vec<u32>> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        let mut scored = self.score_unseen(query)?;
        if scored.len() < k {
            return Err(Error::CatalogExhausted {
                requested: k,
                available: scored.len(),
            });
        }
        scored.sort_unstable_by(rank_order);
        scored.truncate(k);
        Ok(scored.into_iter().map(|(t, _)| t).collect())
    }

    fn fitted_on(&self) -> Option<&InteractionMatrix> {
        Some(&self.train)
    }
}

/// One epoch of samples: each positive followed by its sampled negatives.
fn epoch_samples<R: Rng>(matrix: &InteractionMatrix, negatives: usize, rng: &mut R) -> Vec<Sample> {
    let n_items = matrix.n_cols() as u32;
    let mut samples = Vec::with_capacity(matrix.nnz() * (1 + negatives));
    for (row, item) in matrix.positives() {
        samples.push(Sample {
            row: row as u32,
            item,
            label: 1.0,
        });
        if matrix.row_len(row) >= n_items as usize {
            continue;
        }
        for _ in 0..negatives {
            let neg = loop {
                let candidate = rng.random_range(0..n_items);
                if !matrix.contains(row, candidate) {
                    break candidate;
                }
            };
            samples.push(Sample {
                row: row as u32,
                item: neg,
                label: 0.0,
            });
        }
    }
    samples
}

/// Trains on `matrix`. With a non-empty validation protocol the model is
/// evaluated with MRR@10 after every epoch, training stops after `patience`
/// epochs without improvement and the best epoch's parameters are returned.
pub fn train(
    matrix: &InteractionMatrix,
    validation: Option<&ValidationProtocol>,
    config: &NeuMfConfig,
) -> Result<(NeuMfModel, TrainReport)> {
    config.validate()?;
    if matrix.n_rows() < 2 || matrix.n_cols() < 2 {
        return Err(Error::InvalidArgument(format!(
            "NeuMF needs at least 2 users and 2 tracks, got {}x{}",
            matrix.n_rows(),
            matrix.n_cols()
        )));
    }
    let validation = validation.filter(|p| !p.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = rng.random::<u64>();
    let mut params = NeuMfParams::init(
        matrix.n_rows(),
        matrix.n_cols(),
        config.embedding_dim,
        &config.mlp_hidden_widths,
        init_seed,
    )?;
    let mut adam = Adam::new(&params, config.learning_rate, config.adam);
    let mut grads = Gradients::for_params(&params);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, NeuMfParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut samples = epoch_samples(matrix, config.negatives_per_positive, &mut rng);
        samples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in samples.chunks(config.batch_size).enumerate() {
            grads.clear();
            let batch_loss = params.loss_and_gradient(batch, Some((config.dropout_rate, &mut rng)), &mut grads);
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += batch_loss;
            adam.step(&mut params, &grads, 1.0 / batch.len() as f64);
        }
        if !params.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: samples.len().div_ceil(config.batch_size),
            });
        }
        let mean_loss = epoch_loss / samples.len() as f64;

        let Some(protocol) = validation else {
            history.push(EpochStats {
                epoch,
                mean_loss,
                mrr_at_10: None,
            });
            continue;
        };
        let model = NeuMfModel::new(params.clone(), matrix.clone())?;
        let score = eval::validate(&model, protocol, VALIDATION_K)?;
        history.push(EpochStats {
            epoch,
            mean_loss,
            mrr_at_10: Some(score),
        });
        log::debug!("epoch {epoch}: loss {mean_loss:.5}, mrr@10 {score:.5}");
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (params, best_epoch, best_score) = match best {
        Some((score, epoch, p)) => (p, epoch, Some(score)),
        None => (params, history.len(), None),
    };
    let report = TrainReport {
        best_epoch,
        best_score,
        history,
        stopped_early,
    };
    Ok((NeuMfModel::new(params, matrix.clone())?, report))
}

const MAGIC: &[u8; 8] = b"LBNEUMF1";

/// Writes `params` as a binary dump.
///
/// Layout, all integers and floats little-endian:
/// 8-byte magic `LBNEUMF1`; u32 header length; UTF-8 TOML header holding the
/// training config (including the seed) and the tensor shapes; then the f64
/// values of `gmf_user`, `gmf_item`, `mlp_user`, `mlp_item`, each hidden
/// layer's weight and bias, `out_weight` and `out_bias`, in that order.
pub fn write_params<W: Write>(params: &NeuMfParams, config: &NeuMfConfig, mut out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        n_users: usize,
        n_items: usize,
        dim: usize,
        hidden: Vec<usize>,
        config: &'a NeuMfConfig,
    }
    let header = toml::to_string(&Header {
        n_users: params.n_users,
        n_items: params.n_items,
        dim: params.dim,
        hidden: params.hidden_widths(),
        config,
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    let io = |e| Error::io("<neumf params>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(header.as_bytes()).map_err(io)?;
    for tensor in params.tensors() {
        for x in tensor {
            out.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    out.write_all(&params.out_bias.to_le_bytes()).map_err(io)?;
    Ok(())
}

/// Reads a dump produced by [`write_params`].
pub fn read_params<R: Read>(mut input: R) -> Result<(NeuMfParams, NeuMfConfig)> {
    #[derive(Deserialize)]
    struct Header {
        n_users: usize,
        n_items: usize,
        dim: usize,
        hidden: Vec<usize>,
        config: NeuMfConfig,
    }
    let io = |e| Error::io("<neumf params>", e);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::InvalidArgument("not a NeuMF parameter dump".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(io)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header).map_err(io)?;
    let header: Header = std::str::from_utf8(&header)
        .map_err(|e| Error::Config(e.to_string()))
        .and_then(|s| toml::from_str(s).map_err(|e| Error::Config(e.to_string())))?;
    let mut params = NeuMfParams::zeros(header.n_users, header.n_items, header.dim, &header.hidden)?;
    let mut buf = [0u8; 8];
    for tensor in params.tensors_mut() {
        for x in tensor.iter_mut() {
            input.read_exact(&mut buf).map_err(io)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    input.read_exact(&mut buf).map_err(io)?;
    params.out_bias = f64::from_le_bytes(buf);
    Ok((params, header.config))
}
