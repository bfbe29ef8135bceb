//! Parameters, forward pass and hand-derived backward pass.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Predictions are clamped this far from 0 and 1 before taking logs.
pub const PREDICTION_CLAMP: f64 = 1e-12;

const EMBEDDING_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(
            self.weight
                .chunks_exact(self.n_in)
                .zip(&self.bias)
                .map(|(row, b)| dot(row, x) + b),
        );
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one prediction.
pub fn loss(prediction: f64, label: f64) -> f64 {
    let p = prediction.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// GMF and MLP embedding tables, the MLP tower and the fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuMfParams {
    pub dim: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub gmf_user: Vec<f64>,
    pub gmf_item: Vec<f64>,
    pub mlp_user: Vec<f64>,
    pub mlp_item: Vec<f64>,
    pub hidden: Vec<Dense>,
    /// Length `dim + last hidden width`; GMF part first.
    pub out_weight: Vec<f64>,
    pub out_bias: f64,
}

/// Whether dropout masks are drawn during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dropout {
    Inactive,
    Active { rate: f64, seed: u64 },
}

/// One training example in matrix-row / column space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub row: u32,
    pub item: u32,
    pub label: f64,
}

impl NeuMfParams {
    /// All-zero parameters with the given shape.
    pub fn zeros(n_users: usize, n_items: usize, dim: usize, hidden_widths: &[usize]) -> Result<Self> {
        if n_users == 0 || n_items == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "NeuMF needs at least one user, item and dimension".into(),
            ));
        }
        if hidden_widths.is_empty() || hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "MLP tower needs at least one non-empty hidden layer".into(),
            ));
        }
        let mut hidden = Vec::with_capacity(hidden_widths.len());
        let mut n_in = 2 * dim;
        for &w in hidden_widths {
            hidden.push(Dense::zeros(n_in, w));
            n_in = w;
        }
        Ok(NeuMfParams {
            dim,
            n_users,
            n_items,
            gmf_user: vec![0.0; n_users * dim],
            gmf_item: vec![0.0; n_items * dim],
            mlp_user: vec![0.0; n_users * dim],
            mlp_item: vec![0.0; n_items * dim],
            hidden,
            out_weight: vec![0.0; dim + n_in],
            out_bias: 0.0,
        })
    }

    /// Random initialization: embeddings ~ N(0, 0.01²), ReLU layers
    /// He-normal (std √(2/fan_in)), fusion layer std √(1/fan_in), zero biases.
    pub fn init(n_users: usize, n_items: usize, dim: usize, hidden_widths: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(n_users, n_items, dim, hidden_widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Normal::new(0.0, EMBEDDING_STD).expect("valid std");
        for table in [&mut p.gmf_user, &mut p.gmf_item, &mut p.mlp_user, &mut p.mlp_item] {
            table.iter_mut().for_each(|x| *x = embedding.sample(&mut rng));
        }
        for layer in &mut p.hidden {
            let he = Normal::new(0.0, (2.0 / layer.n_in as f64).sqrt()).expect("valid std");
            layer.weight.iter_mut().for_each(|x| *x = he.sample(&mut rng));
        }
        let fan_in = p.out_weight.len() as f64;
        let out = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("valid std");
        p.out_weight.iter_mut().for_each(|x| *x = out.sample(&mut rng));
        Ok(p)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.n_out).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum::<usize>() + 1
    }

    /// Every weight tensor except the scalar output bias, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.gmf_user, &self.gmf_item, &self.mlp_user, &self.mlp_item];
        for l in &self.hidden {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.out_weight);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.gmf_user,
            &mut self.gmf_item,
            &mut self.mlp_user,
            &mut self.mlp_item,
        ];
        for l in &mut self.hidden {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.out_weight);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.out_bias.is_finite() && self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn row<'a>(&self, table: &'a [f64], index: usize) -> &'a [f64] {
        &table[index * self.dim..(index + 1) * self.dim]
    }

    fn check(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.n_users {
            return Err(Error::InvalidArgument(format!(
                "user index {user} out of range {}",
                self.n_users
            )));
        }
        if item >= self.n_items {
            return Err(Error::InvalidArgument(format!(
                "item index {item} out of range {}",
                self.n_items
            )));
        }
        Ok(())
    }

    /// Predicted interaction probability in (0, 1).
    pub fn forward(&self, user: usize, item: usize, dropout: Dropout) -> Result<f64> {
        self.check(user, item)?;
        let mut trace = Trace::default();
        let p = match dropout {
            Dropout::Inactive => self.forward_vectors(
                self.row(&self.gmf_user, user),
                self.row(&self.mlp_user, user),
                item,
                None::<(f64, &mut ChaCha8Rng)>,
                &mut trace,
            ),
            Dropout::Active { rate, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.forward_vectors(
                    self.row(&self.gmf_user, user),
                    self.row(&self.mlp_user, user),
                    item,
                    Some((rate, &mut rng)),
                    &mut trace,
                )
            }
        };
        Ok(p)
    }

    /// Forward pass for explicit user vectors, recording intermediates.
    pub(crate) fn forward_vectors<R: Rng>(
        &self,
        gmf_user: &[f64],
        mlp_user: &[f64],
        item: usize,
        dropout: Option<(f64, &mut R)>,
        trace: &mut Trace,
    ) -> f64 {
        let d = self.dim;
        let gi = self.row(&self.gmf_item, item);
        trace.gmf.clear();
        trace.gmf.extend(gmf_user.iter().zip(gi).map(|(a, b)| a * b));

        let depth = self.hidden.len();
        trace.resize(depth);
        let x0 = &mut trace.inputs[0];
        x0.clear();
        x0.extend_from_slice(mlp_user);
        x0.extend_from_slice(self.row(&self.mlp_item, item));

        let mut dropout = dropout;
        for (l, layer) in self.hidden.iter().enumerate() {
            let (before, after) = trace.inputs.split_at_mut(l + 1);
            layer.apply(&before[l], &mut trace.pre[l]);
            let scale = &mut trace.scale[l];
            scale.clear();
            match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - *rate);
                    scale.extend((0..layer.n_out).map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep }));
                }
                _ => scale.resize(layer.n_out, 1.0),
            }
            let out = &mut after[0];
            out.clear();
            out.extend(trace.pre[l].iter().zip(scale.iter()).map(|(&z, &s)| z.max(0.0) * s));
        }
        let top = &trace.inputs[depth];
        let logit = dot(&self.out_weight[..d], &trace.gmf) + dot(&self.out_weight[d..], top) + self.out_bias;
        trace.output = sigmoid(logit);
        trace.output
    }

    /// Summed BCE over `samples` and its gradient, added into `grads`.
    /// Dropout masks, when enabled, are drawn from `dropout`'s rng in sample
    /// order.
    pub fn loss_and_gradient<R: Rng>(
        &self,
        samples: &[Sample],
        mut dropout: Option<(f64, &mut R)>,
        grads: &mut Gradients,
    ) -> f64 {
        let d = self.dim;
        let mut trace = Trace::default();
        let mut total = 0.0;
        let mut upstream = Vec::new();
        let mut downstream = Vec::new();
        for s in samples {
            let (u, i) = (s.row as usize, s.item as usize);
            let drop = dropout.as_mut().map(|(rate, rng)| (*rate, &mut **rng));
            let p = self.forward_vectors(
                self.row(&self.gmf_user, u),
                self.row(&self.mlp_user, u),
                i,
                drop,
                &mut trace,
            );
            total += loss(p, s.label);
            let dlogit = p - s.label;

            grads.out_bias += dlogit;
            for (g, h) in grads.out_weight[..d].iter_mut().zip(&trace.gmf) {
                *g += dlogit * h;
            }
            let depth = self.hidden.len();
            for (g, h) in grads.out_weight[d..].iter_mut().zip(&trace.inputs[depth]) {
                *g += dlogit * h;
            }

            // GMF branch.
            let gu = self.row(&self.gmf_user, u);
            let gi = self.row(&self.gmf_item, i);
            let du = grads.gmf_user.entry(s.row).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                du[k] += dlogit * self.out_weight[k] * gi[k];
            }
            let di = grads.gmf_item.entry(s.item).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                di[k] += dlogit * self.out_weight[k] * gu[k];
            }

            // MLP tower, top down.
            upstream.clear();
            upstream.extend(self.out_weight[d..].iter().map(|w| dlogit * w));
            for l in (0..depth).rev() {
                let layer = &self.hidden[l];
                let glayer = &mut grads.hidden[l];
                let x = &trace.inputs[l];
                downstream.clear();
                downstream.resize(layer.n_in, 0.0);
                for (o, &up) in upstream.iter().enumerate().take(layer.n_out) {
                    let dz = if trace.pre[l][o] > 0.0 {
                        up * trace.scale[l][o]
                    } else {
                        0.0
                    };
                    if dz == 0.0 {
                        continue;
                    }
                    glayer.bias[o] += dz;
                    let wrow = &layer.weight[o * layer.n_in..(o + 1) * layer.n_in];
                    let grow = &mut glayer.weight[o * layer.n_in..(o + 1) * layer.n_in];
                    for k in 0..layer.n_in {
                        grow[k] += dz * x[k];
                        downstream[k] += dz * wrow[k];
                    }
                }
                std::mem::swap(&mut upstream, &mut downstream);
            }
            let du = grads.mlp_user.entry(s.row).or_insert_with(|| vec![0.0; d]);
            du.iter_mut().zip(&upstream[..d]).for_each(|(g, x)| *g += x);
            let di = grads.mlp_item.entry(s.item).or_insert_with(|| vec![0.0; d]);
            di.iter_mut().zip(&upstream[d..]).for_each(|(g, x)| *g += x);
        }
        total
    }

    /// Scores `items` for one user vector pair with dropout off. The user's
    /// share of the first hidden layer is computed once.
    pub(crate) fn score_items(&self, gmf_user: &[f64], mlp_user: &[f64], items: &[u32]) -> Vec<f64> {
        let d = self.dim;
        let first = &self.hidden[0];
        let user_part: Vec<f64> = first
            .weight
            .chunks_exact(first.n_in)
            .zip(&first.bias)
            .map(|(row, b)| dot(&row[..d], mlp_user) + b)
            .collect();
        let mut a = Vec::with_capacity(first.n_out);
        let mut z = Vec::new();
        items
            .iter()
            .map(|&item| {
                let item = item as usize;
                let mi = self.row(&self.mlp_item, item);
                a.clear();
                a.extend(
                    first
                        .weight
                        .chunks_exact(first.n_in)
                        .zip(&user_part)
                        .map(|(row, up)| (up + dot(&row[d..], mi)).max(0.0)),
                );
                for layer in &self.hidden[1..] {
                    layer.apply(&a, &mut z);
                    a.clear();
                    a.extend(z.iter().map(|v| v.max(0.0)));
                }
                let gi = self.row(&self.gmf_item, item);
                let gmf: f64 = (0..d).map(|k| self.out_weight[k] * gmf_user[k] * gi[k]).sum();
                sigmoid(gmf + dot(&self.out_weight[d..], &a) + self.out_bias)
            })
            .collect()
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Default)]
pub(crate) struct Trace {
    gmf: Vec<f64>,
    /// `inputs[l]` feeds hidden layer `l`; the last entry is the tower output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    scale: Vec<Vec<f64>>,
    output: f64,
}

impl Trace {
    fn resize(&mut self, depth: usize) {
        self.inputs.resize_with(depth + 1, Vec::new);
        self.pre.resize_with(depth, Vec::new);
        self.scale.resize_with(depth, Vec::new);
    }
}

/// Gradient accumulator. Embedding gradients are kept only for touched rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub gmf_user: BTreeMap<u32, Vec<f64>>,
    pub gmf_item: BTreeMap<u32, Vec<f64>>,
    pub mlp_user: BTreeMap<u32, Vec<f64>>,
    pub mlp_item: BTreeMap<u32, Vec<f64>>,
    pub hidden: Vec<Dense>,
    pub out_weight: Vec<f64>,
    pub out_bias: f64,
}

impl Gradients {
    pub fn for_params(params: &NeuMfParams) -> Self {
        Gradients {
            gmf_user: BTreeMap::new(),
            gmf_item: BTreeMap::new(),
            mlp_user: BTreeMap::new(),
            mlp_item: BTreeMap::new(),
            hidden: params.hidden.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
            out_weight: vec![0.0; params.out_weight.len()],
            out_bias: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.gmf_user.clear();
        self.gmf_item.clear();
        self.mlp_user.clear();
        self.mlp_item.clear();
        for l in &mut self.hidden {
            l.weight.iter_mut().for_each(|x| *x = 0.0);
            l.bias.iter_mut().for_each(|x| *x = 0.0);
        }
        self.out_weight.iter_mut().for_each(|x| *x = 0.0);
        self.out_bias = 0.0;
    }

    /// Densifies into a parameter-shaped value (tests and diagnostics).
    pub fn to_dense(&self, like: &NeuMfParams) -> NeuMfParams {
        let mut dense = NeuMfParams::zeros(like.n_users, like.n_items, like.dim, &like.hidden_widths())
            .expect("shape of existing params");
        let d = like.dim;
        for (sparse, table) in [
            (&self.gmf_user, &mut dense.gmf_user),
            (&self.gmf_item, &mut dense.gmf_item),
            (&self.mlp_user, &mut dense.mlp_user),
            (&self.mlp_item, &mut dense.mlp_item),
        ] {
            for (&r, g) in sparse {
                table[r as usize * d..(r as usize + 1) * d].copy_from_slice(g);
            }
        }
        dense.hidden = self.hidden.clone();
        dense.out_weight = self.out_weight.clone();
        dense.out_bias = self.out_bias;
        dense
    }
}
