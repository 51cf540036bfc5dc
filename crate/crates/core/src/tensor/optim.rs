//! AdamW with decoupled weight decay.
//!
//! Decay is applied as a single multiplicative shrink `w *= 1 - lr * wd`
//! before the adaptive update, so a zero-gradient step changes a weight by
//! exactly that factor and `wd = 0` reduces to plain Adam bit for bit.

use super::backward::Grads;
use super::Scalar;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient contained NaN or infinity; no parameter, moment, or step
    /// counter changed.
    RejectedNonFinite,
}

pub struct AdamW<E: Scalar> {
    pub cfg: AdamWConfig,
    t: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Scalar> AdamW<E> {
    /// Moment buffers are allocated to match `params` and stay aligned with
    /// its index space.
    pub fn new(cfg: AdamWConfig, params: &ParamStore<E>) -> Self {
        let m = (0..params.len()).map(|i| vec![E::ZERO; params.value_at(i).len()]).collect();
        let v = (0..params.len()).map(|i| vec![E::ZERO; params.value_at(i).len()]).collect();
        AdamW { cfg, t: 0, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter in the store. A parameter without a
    /// gradient in `grads` is treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<E>, grads: &Grads<E>) -> StepOutcome {
        debug_assert_eq!(self.m.len(), params.len(), "optimizer bound to a different store");
        for ix in 0..params.len() {
            if let Some(g) = grads.param_grad_data(ix) {
                if g.iter().any(|x| !x.is_finite()) {
                    return StepOutcome::RejectedNonFinite;
                }
            }
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let shrink = 1.0 - c.lr * c.weight_decay;
        for ix in 0..params.len() {
            let g = grads.param_grad_data(ix);
            let m = &mut self.m[ix];
            let v = &mut self.v[ix];
            let mut value = params.value_at(ix).clone();
            let w = value.make_mut();
            for j in 0..w.len() {
                let gj = g.map_or(0.0, |g| g[j].to_f64());
                let mj = c.beta1 * m[j].to_f64() + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j].to_f64() + (1.0 - c.beta2) * gj * gj;
                m[j] = E::from_f64(mj);
                v[j] = E::from_f64(vj);
                let update = c.lr * (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                w[j] = E::from_f64(w[j].to_f64() * shrink - update);
            }
            params.set_at(ix, value);
        }
        StepOutcome::Applied
    }
}
