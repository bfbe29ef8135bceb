//! Adam with bias correction.
//!
//! Dense tensors are updated every step. Embedding rows are updated only when
//! they receive a gradient (lazy Adam), using the global step count for bias
//! correction, which keeps a step proportional to the batch rather than the
//! catalog.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, NeuMfParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    learning_rate: f64,
    step: u64,
    first: NeuMfParams,
    second: NeuMfParams,
}

struct StepSize {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    correction1: f64,
    correction2: f64,
    scale: f64,
}

impl StepSize {
    #[inline]
    fn apply(&self, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
        for k in 0..param.len() {
            let g = grad[k] * self.scale;
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = m[k] / self.correction1;
            let v_hat = v[k] / self.correction2;
            param[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

impl Adam {
    pub fn new(params: &NeuMfParams, learning_rate: f64, config: AdamConfig) -> Self {
        let zeros = NeuMfParams::zeros(params.n_users, params.n_items, params.dim, &params.hidden_widths())
            .expect("shape of existing params");
        Adam {
            config,
            learning_rate,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with gradient `grads * scale`.
    pub fn step(&mut self, params: &mut NeuMfParams, grads: &Gradients, scale: f64) {
        self.step += 1;
        let t = self.step as i32;
        let s = StepSize {
            lr: self.learning_rate,
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            eps: self.config.epsilon,
            correction1: 1.0 - self.config.beta1.powi(t),
            correction2: 1.0 - self.config.beta2.powi(t),
            scale,
        };
        let d = params.dim;
        for (sparse, table, m, v) in [
            (
                &grads.gmf_user,
                &mut params.gmf_user,
                &mut self.first.gmf_user,
                &mut self.second.gmf_user,
            ),
            (
                &grads.gmf_item,
                &mut params.gmf_item,
                &mut self.first.gmf_item,
                &mut self.second.gmf_item,
            ),
            (
                &grads.mlp_user,
                &mut params.mlp_user,
                &mut self.first.mlp_user,
                &mut self.second.mlp_user,
            ),
            (
                &grads.mlp_item,
                &mut params.mlp_item,
                &mut self.first.mlp_item,
                &mut self.second.mlp_item,
            ),
        ] {
            for (&row, g) in sparse {
                let r = row as usize * d..(row as usize + 1) * d;
                s.apply(&mut table[r.clone()], g, &mut m[r.clone()], &mut v[r]);
            }
        }
        for (l, layer) in params.hidden.iter_mut().enumerate() {
            let (m, v) = (&mut self.first.hidden[l], &mut self.second.hidden[l]);
            s.apply(&mut layer.weight, &grads.hidden[l].weight, &mut m.weight, &mut v.weight);
            s.apply(&mut layer.bias, &grads.hidden[l].bias, &mut m.bias, &mut v.bias);
        }
        s.apply(
            &mut params.out_weight,
            &grads.out_weight,
            &mut self.first.out_weight,
            &mut self.second.out_weight,
        );
        let mut bias = [params.out_bias];
        let mut mb = [self.first.out_bias];
        let mut vb = [self.second.out_bias];
        s.apply(&mut bias, &[grads.out_bias], &mut mb, &mut vb);
        params.out_bias = bias[0];
        self.first.out_bias = mb[0];
        self.second.out_bias = vb[0];
    }
}
