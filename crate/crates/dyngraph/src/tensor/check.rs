//! Central finite-difference gradient verification.
//!
//! Used by the op-suite tests below and by the `gradcheck` command: the
//! autodiff gradient of a scalar loss is compared against
//! (f(θ+h) − f(θ−h)) / 2h per parameter element. Meant to run in f64, where
//! truncation and roundoff both stay far below the tolerances used.

use std::collections::BTreeMap;

use super::tape::Gradients;
use super::Scalar;
use crate::error::Result;
use crate::params::ParamBank;

/// Central-difference gradients of `loss` w.r.t. every parameter in `bank`.
/// `loss` must be a pure function of the bank contents.
pub fn finite_diff_grads<S: Scalar>(
    bank: &ParamBank<S>,
    step: f64,
    loss: &dyn Fn(&ParamBank<S>) -> Result<f64>,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let names: Vec<String> = bank.names().cloned().collect();
    let mut out = BTreeMap::new();
    let mut work = bank.clone();
    for name in names {
        let len = bank.get(&name).len();
        let mut grad = Vec::with_capacity(len);
        for i in 0..len {
            let orig = bank.get(&name).data()[i];
            let h = S::from_f64(step);
            work.get_mut(&name).data_mut()[i] = orig + h;
            let up = loss(&work)?;
            work.get_mut(&name).data_mut()[i] = orig - h;
            let down = loss(&work)?;
            work.get_mut(&name).data_mut()[i] = orig;
            grad.push((up - down) / (2.0 * step));
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// |a−b| relative to max(|a|, |b|), floored so near-zero pairs compare in
/// absolute terms.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error per parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

/// Compare autodiff gradients against finite-difference gradients.
pub fn compare_grads<S: Scalar>(
    auto: &Gradients<S>,
    fd: &BTreeMap<String, Vec<f64>>,
    tolerance: f64,
    floor: f64,
) -> GradCheckReport {
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, fd_grad) in fd {
        let auto_grad = auto.get(name).expect("autodiff covers every parameter");
        let mut max_rel: f64 = 0.0;
        for (i, &fd_i) in fd_grad.iter().enumerate() {
            let a = auto_grad.data()[i].to_f64_();
            max_rel = max_rel.max(relative_error(a, fd_i, floor));
        }
        worst = worst.max(max_rel);
        rows.push(GradCheckRow { name: name.clone(), elements: fd_grad.len(), max_rel_err: max_rel });
    }
    GradCheckReport { rows, worst, tolerance }
}
