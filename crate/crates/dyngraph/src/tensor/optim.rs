//! AdamW: Adam moment estimates with weight decay applied directly to the
//! parameters (decoupled from the gradient-based step).

use std::collections::BTreeMap;

use super::tape::Gradients;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::params::ParamBank;

pub struct AdamW<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the bank. Parameters the gradient
    /// map does not cover step with g = 0 (moments decay, weight decay still
    /// applies).
    pub fn step(&mut self, params: &mut ParamBank<S>, grads: &Gradients<S>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let bc1 = S::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = S::from_f64(1.0 - self.beta2.powi(t));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        let wd = S::from_f64(self.weight_decay);
        let one = S::one();

        for (name, theta) in params.iter_mut() {
            let zero;
            let g = match grads.get(name) {
                Some(g) => {
                    if g.shape() != theta.shape() {
                        return Err(Error::shape(
                            "adamw",
                            format!("gradient for {name:?} has shape {:?}", g.shape()),
                        ));
                    }
                    g
                }
                None => {
                    zero = Tensor::zeros(theta.shape());
                    &zero
                }
            };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(theta.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(theta.shape()));
            let md = m.data_mut();
            let vd = v.data_mut();
            let td = theta.data_mut();
            for i in 0..td.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (one - b1) * gi;
                vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                td[i] = td[i] - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * td[i];
            }
        }
        Ok(())
    }

    // ── checkpoint plumbing ─────────────────────────────────────────────────

    pub fn moments(&self) -> impl Iterator<Item = (&String, &Tensor<S>, &Tensor<S>)> {
        self.m.iter().map(move |(k, m)| (k, m, &self.v[k]))
    }

    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, (Tensor<S>, Tensor<S>)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (k, (m, v)) in moments {
            self.m.insert(k.clone(), m);
            self.v.insert(k, v);
        }
    }
}
