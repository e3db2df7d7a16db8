//! Batch normalization over the channel axis of (N, C, V, T) tensors.
//!
//! Built by composing tape primitives, so gradients w.r.t. the input and the
//! affine parameters fall out of the existing VJPs. Training mode normalizes
//! by batch statistics (biased variance) and folds them into running stats;
//! eval mode normalizes by the running stats as constants.

use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Running statistics for one batch-norm site. `seen` guards eval-mode use
/// before any training batch has populated the stats.
#[derive(Clone)]
pub struct BnStat<S> {
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
    pub seen: bool,
}

impl<S: Scalar> BnStat<S> {
    pub fn new(channels: usize) -> Self {
        BnStat {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], S::one()),
            seen: false,
        }
    }
}

/// One batch-norm application. `gamma`/`beta` are (C,) parameters; `x` is
/// (N, C, V, T). `momentum` is the fraction of the new batch statistic folded
/// into the running value each training call.
pub fn batch_norm<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    gamma: Var,
    beta: Var,
    stat: &mut BnStat<S>,
    training: bool,
    eps: f64,
    momentum: f64,
) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 4 {
        return Err(Error::shape("batch_norm", format!("input must be (N,C,V,T), got {:?}", xs)));
    }
    let c = xs[1];
    if tape.value(gamma).shape() != [c] || tape.value(beta).shape() != [c] {
        return Err(Error::shape("batch_norm", format!("gamma/beta must be ({c},)")));
    }
    let count = xs[0] * xs[2] * xs[3];
    let gamma_r = tape.reshape(gamma, &[1, c, 1, 1])?;
    let beta_r = tape.reshape(beta, &[1, c, 1, 1])?;
    let eps_s = S::from_f64(eps);

    let xhat = if training {
        if count < 2 {
            return Err(Error::invalid("batch_norm", "needs at least 2 values per channel"));
        }
        let mean = tape.mean_axes(x, &[0, 2, 3], true)?;
        let centered = tape.sub(x, mean)?;
        let sq = tape.mul(centered, centered)?;
        let var = tape.mean_axes(sq, &[0, 2, 3], true)?; // biased
        // Fold batch stats into the running values (plain tensor math; the
        // running stats are not differentiated). Running variance stores the
        // unbiased estimate.
        let m = S::from_f64(momentum);
        let bias_fix = S::from_f64(count as f64 / (count as f64 - 1.0));
        let batch_mean = tape.value(mean).data().to_vec();
        let batch_var = tape.value(var).data().to_vec();
        {
            let rm = stat.mean.data_mut();
            let rv = stat.var.data_mut();
            for i in 0..c {
                rm[i] = (S::one() - m) * rm[i] + m * batch_mean[i];
                rv[i] = (S::one() - m) * rv[i] + m * batch_var[i] * bias_fix;
            }
        }
        stat.seen = true;
        let var_eps = tape.add_scalar(var, eps_s)?;
        let denom = tape.sqrt(var_eps)?;
        tape.div(centered, denom)?
    } else {
        if !stat.seen {
            return Err(Error::invalid(
                "batch_norm",
                "eval mode before any training batch: running stats are uninitialized",
            ));
        }
        let mean = tape.constant(stat.mean.reshaped(&[1, c, 1, 1])?)?;
        let inv = stat.var.map(|v| S::one() / (v + eps_s).sqrt());
        let inv = tape.constant(inv.reshaped(&[1, c, 1, 1])?)?;
        let centered = tape.sub(x, mean)?;
        tape.mul(centered, inv)?
    };
    let scaled = tape.mul(xhat, gamma_r)?;
    tape.add(scaled, beta_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0) * 3.0 + 1.0).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(random_input(&[4, 3, 2, 5], 7)).unwrap();
        let gamma = tape.constant(Tensor::full(&[3], 1.0)).unwrap();
        let beta = tape.constant(Tensor::zeros(&[3])).unwrap();
        let mut stat = BnStat::new(3);
        let y = batch_norm(&mut tape, x, gamma, beta, &mut stat, true, 1e-5, 0.1).unwrap();
        let yd = tape.value(y);
        let (n, c, v, t) = (4, 3, 2, 5);
        for ch in 0..c {
            let mut vals = Vec::new();
            for s in 0..n {
                for row in 0..v {
                    for ti in 0..t {
                        vals.push(yd.at(&[s, ch, row, ti]));
                    }
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
        assert!(stat.seen);
    }

    #[test]
    fn eval_before_training_is_an_error() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 2, 2])).unwrap();
        let gamma = tape.constant(Tensor::full(&[3], 1.0)).unwrap();
        let beta = tape.constant(Tensor::zeros(&[3])).unwrap();
        let mut stat = BnStat::new(3);
        let err = batch_norm(&mut tape, x, gamma, beta, &mut stat, false, 1e-5, 0.1);
        assert!(err.is_err());
    }

    #[test]
    fn running_stats_approach_data_statistics() {
        // Feed the same batch many times: running stats converge to its stats.
        let x = random_input(&[8, 2, 3, 4], 11);
        let mut stat = BnStat::new(2);
        for _ in 0..200 {
            let mut tape: Tape<f64> = Tape::new();
            let xv = tape.constant(x.clone()).unwrap();
            let gamma = tape.constant(Tensor::full(&[2], 1.0)).unwrap();
            let beta = tape.constant(Tensor::zeros(&[2])).unwrap();
            batch_norm(&mut tape, xv, gamma, beta, &mut stat, true, 1e-5, 0.1).unwrap();
        }
        // Direct per-channel statistics.
        let (n, c, v, t) = (8, 2, 3, 4);
        for ch in 0..c {
            let mut vals = Vec::new();
            for s in 0..n {
                for row in 0..v {
                    for ti in 0..t {
                        vals.push(x.at(&[s, ch, row, ti]));
                    }
                }
            }
            let count = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / count;
            let unbiased: f64 =
                vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
            assert!((stat.mean.data()[ch] - mean).abs() < 1e-9);
            assert!((stat.var.data()[ch] - unbiased).abs() < 1e-7);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats_and_leaves_them_alone() {
        let mut stat = BnStat::new(1);
        {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.constant(random_input(&[4, 1, 2, 3], 3)).unwrap();
            let gamma = tape.constant(Tensor::full(&[1], 1.0)).unwrap();
            let beta = tape.constant(Tensor::zeros(&[1])).unwrap();
            batch_norm(&mut tape, x, gamma, beta, &mut stat, true, 1e-5, 0.1).unwrap();
        }
        let frozen_mean = stat.mean.data().to_vec();
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(random_input(&[2, 1, 2, 3], 5)).unwrap();
        let gamma = tape.constant(Tensor::full(&[1], 1.0)).unwrap();
        let beta = tape.constant(Tensor::zeros(&[1])).unwrap();
        batch_norm(&mut tape, x, gamma, beta, &mut stat, false, 1e-5, 0.1).unwrap();
        assert_eq!(stat.mean.data(), frozen_mean.as_slice(), "eval must not touch stats");
    }
}
