//! Training objective: classification cross-entropy plus three structural
//! regularizers on the learned dynamic graph — feature smoothness (a
//! normalized-Laplacian quadratic form), temporal smoothness (L1 drift
//! between consecutive snapshots), and sparsity (entrywise L1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are floored at this value inside the log.
const PROB_FLOOR: f64 = 1e-12;

/// Degree floor used when normalizing the graph Laplacian.
const DEGREE_EPS: f64 = 1e-8;

/// Relative weights of the graph regularizers. Zero disables a term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_fs: f64,
    pub lambda_ts: f64,
    pub lambda_sp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_fs: 1e-4, lambda_ts: 1e-3, lambda_sp: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_fs < 0.0 || self.lambda_ts < 0.0 || self.lambda_sp < 0.0 {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Per-sample cross-entropy −log p_y. `probs` is (N, C) on the tape; returns
/// a length-N vector. Probabilities are floored at 1e-12 before the log.
pub fn cross_entropy<S: Scalar>(tape: &mut Tape<S>, probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("cross_entropy", format!("expected (N,C), got {shape:?}")));
    }
    let (n, classes) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::invalid(
            "cross_entropy",
            format!("{} labels for {} rows", labels.len(), n),
        ));
    }
    let mut onehot = vec![S::zero(); n * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid("cross_entropy", format!("label {y} out of range 0..{classes}")));
        }
        onehot[i * classes + y] = S::one();
    }
    let mask = tape.constant(Tensor::from_vec(&[n, classes], onehot)?)?;
    let picked = tape.mul(probs, mask)?;
    let p_y = tape.sum_axes(picked, &[1], false)?;
    let floored = tape.max_scalar(p_y, S::from_f64(PROB_FLOOR))?;
    let logp = tape.log(floored)?;
    tape.neg(logp)
}

/// Feature-smoothness penalty (1/V²)·Σ_t Tr(F_tᵀ L̂_t F_t) per sample, with
/// L̂ = D^{−1/2}(D−A)D^{−1/2} and D the (floored) degree matrix of A itself
/// (no self-edges here). `adjacency` and `features` are (N, T, V, V); returns
/// a length-N vector.
pub fn feature_smoothness<S: Scalar>(
    tape: &mut Tape<S>,
    adjacency: Var,
    features: Var,
) -> Result<Var> {
    let shape = tape.value(adjacency).shape().to_vec();
    if shape.len() != 4 || shape[2] != shape[3] {
        return Err(Error::shape(
            "feature_smoothness",
            format!("expected (N,T,V,V), got {shape:?}"),
        ));
    }
    if tape.value(features).shape() != shape.as_slice() {
        return Err(Error::shape("feature_smoothness", "features must match adjacency shape"));
    }
    let (n, t_count, v) = (shape[0], shape[1], shape[2]);
    let batch = n * t_count;
    let a3 = tape.reshape(adjacency, &[batch, v, v])?;
    let f3 = tape.reshape(features, &[batch, v, v])?;

    let deg = tape.sum_axes(a3, &[2], true)?; // (B, V, 1)
    let floored = tape.max_scalar(deg, S::from_f64(DEGREE_EPS))?;
    let root = tape.sqrt(floored)?;
    let inv_col = tape.scalar_div(S::one(), root)?; // D^{-1/2} as a column
    let inv_row = tape.transpose(inv_col, &[0, 2, 1])?;
    // D^{-1/2} A D^{-1/2}
    let an = tape.mul(a3, inv_col)?;
    let an = tape.mul(an, inv_row)?;
    // D^{-1/2} D D^{-1/2} as a diagonal matrix, built from the same floors.
    let inv_sq = tape.mul(inv_col, inv_col)?;
    let diag_scale = tape.mul(deg, inv_sq)?; // (B, V, 1)
    let eye = tape.constant(Tensor::eye(v))?;
    let dmat = tape.mul(eye, diag_scale)?; // (B, V, V)
    let lap = tape.sub(dmat, an)?;
    // Tr(Fᵀ L̂ F) per (sample, snapshot).
    let lf = tape.bmm(lap, f3)?;
    let ft = tape.transpose(f3, &[0, 2, 1])?;
    let quad = tape.bmm(ft, lf)?;
    let tr = tape.trace(quad)?; // (B,)
    let per_snap = tape.reshape(tr, &[n, t_count])?;
    let per_sample = tape.sum_axes(per_snap, &[1], false)?;
    tape.mul_scalar(per_sample, S::from_f64(1.0 / (v * v) as f64))
}

/// Temporal-smoothness penalty Σ_{t<T} ‖A_t − A_{t+1}‖₁ per sample. Returns a
/// length-N vector; zero when T = 1.
pub fn temporal_smoothness<S: Scalar>(tape: &mut Tape<S>, adjacency: Var) -> Result<Var> {
    let shape = tape.value(adjacency).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(
            "temporal_smoothness",
            format!("expected (N,T,V,V), got {shape:?}"),
        ));
    }
    let (n, t_count) = (shape[0], shape[1]);
    if t_count == 1 {
        return tape.constant(Tensor::zeros(&[n]));
    }
    let head = tape.slice(adjacency, 1, 0, t_count - 1)?;
    let tail = tape.slice(adjacency, 1, 1, t_count - 1)?;
    let diff = tape.sub(head, tail)?;
    let mag = tape.abs(diff)?;
    tape.sum_axes(mag, &[1, 2, 3], false)
}

/// Sparsity penalty Σ_t ‖A_t‖₁ per sample. Returns a length-N vector.
pub fn sparsity_penalty<S: Scalar>(tape: &mut Tape<S>, adjacency: Var) -> Result<Var> {
    let shape = tape.value(adjacency).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("sparsity_penalty", format!("expected (N,T,V,V), got {shape:?}")));
    }
    let mag = tape.abs(adjacency)?;
    tape.sum_axes(mag, &[1, 2, 3], false)
}

/// Batch loss and the mean value of each component, for logging.
pub struct LossParts<S: Scalar> {
    /// Mean total loss over the batch, on the tape (backpropagate this).
    pub total: Var,
    pub cross_entropy: S,
    pub feature_smoothness: S,
    pub temporal_smoothness: S,
    pub sparsity: S,
}

/// Total loss: mean over the batch of CE + λ_FS·FS + λ_TS·TS + λ_SP·SP.
/// Terms with zero weight are skipped entirely (they contribute neither
/// compute nor gradient).
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    probs: Var,
    labels: &[usize],
    adjacency: Var,
    features: Var,
    weights: &LossWeights,
) -> Result<LossParts<S>> {
    weights.validate()?;
    let ce = cross_entropy(tape, probs, labels)?;
    let mut total = ce;
    let mut fs_mean = S::zero();
    let mut ts_mean = S::zero();
    let mut sp_mean = S::zero();
    let mean_of = |tape: &Tape<S>, v: Var| -> S {
        let t = tape.value(v);
        let n = t.len();
        t.data().iter().fold(S::zero(), |acc, &x| acc + x) / S::from_f64(n as f64)
    };
    if weights.lambda_fs > 0.0 {
        let fs = feature_smoothness(tape, adjacency, features)?;
        fs_mean = mean_of(tape, fs);
        let scaled = tape.mul_scalar(fs, S::from_f64(weights.lambda_fs))?;
        total = tape.add(total, scaled)?;
    }
    if weights.lambda_ts > 0.0 {
        let ts = temporal_smoothness(tape, adjacency)?;
        ts_mean = mean_of(tape, ts);
        let scaled = tape.mul_scalar(ts, S::from_f64(weights.lambda_ts))?;
        total = tape.add(total, scaled)?;
    }
    if weights.lambda_sp > 0.0 {
        let sp = sparsity_penalty(tape, adjacency)?;
        sp_mean = mean_of(tape, sp);
        let scaled = tape.mul_scalar(sp, S::from_f64(weights.lambda_sp))?;
        total = tape.add(total, scaled)?;
    }
    let ce_mean = mean_of(tape, ce);
    let total = tape.mean_all(total)?;
    Ok(LossParts {
        total,
        cross_entropy: ce_mean,
        feature_smoothness: fs_mean,
        temporal_smoothness: ts_mean,
        sparsity: sp_mean,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn eval_vec(f: impl FnOnce(&mut Tape<f64>) -> Result<Var>) -> Vec<f64> {
        let mut tape = Tape::<f64>::no_grad();
        let v = f(&mut tape).unwrap();
        tape.value(v).data().to_vec()
    }

    // -- cross-entropy --------------------------------------------------------

    #[test]
    fn cross_entropy_reference_values() {
        let got = eval_vec(|tape| {
            let probs = tape.constant(
                Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.5, 0.5, 0.25, 0.75]).unwrap(),
            )?;
            cross_entropy(tape, probs, &[0, 1, 0])
        });
        assert!(got[0].abs() < 1e-12, "perfect prediction costs nothing");
        assert!((got[1] - (2.0f64).ln()).abs() < 1e-12);
        assert!((got[2] - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_floors_zero_probability() {
        let got = eval_vec(|tape| {
            let probs = tape.constant(Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap())?;
            cross_entropy(tape, probs, &[0])
        });
        assert!((got[0] - (-(1e-12f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut tape = Tape::<f64>::no_grad();
        let probs = tape.constant(Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(cross_entropy(&mut tape, probs, &[2]).is_err());
        assert!(cross_entropy(&mut tape, probs, &[0, 1]).is_err());
    }

    // -- feature smoothness -----------------------------------------------------

    /// Pairwise-sum oracle: (1/V²)·Σ_t ½·Σ_{ij} A_ij‖f_i/√d_i − f_j/√d_j‖²,
    /// with the same degree floor as the implementation.
    fn fs_oracle(a: &Tensor<f64>, f: &Tensor<f64>) -> Vec<f64> {
        let shape = a.shape();
        let (n, t_count, v) = (shape[0], shape[1], shape[2]);
        let mut out = vec![0.0; n];
        for s in 0..n {
            for t in 0..t_count {
                let deg: Vec<f64> = (0..v)
                    .map(|i| (0..v).map(|j| a.at(&[s, t, i, j])).sum::<f64>().max(DEGREE_EPS))
                    .collect();
                let mut acc = 0.0;
                for i in 0..v {
                    for j in 0..v {
                        let aij = a.at(&[s, t, i, j]);
                        if aij == 0.0 {
                            continue;
                        }
                        let mut dist = 0.0;
                        for k in 0..v {
                            let d = f.at(&[s, t, i, k]) / deg[i].sqrt()
                                - f.at(&[s, t, j, k]) / deg[j].sqrt();
                            dist += d * d;
                        }
                        acc += aij * dist;
                    }
                }
                out[s] += 0.5 * acc / (v * v) as f64;
            }
        }
        out
    }

    #[test]
    fn feature_smoothness_matches_pairwise_oracle() {
        for seed in 0..100 {
            let n = 2;
            let t = 2;
            let v = 4;
            // Symmetric non-negative adjacency, like the learner produces.
            let mut a = vec![0.0; n * t * v * v];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for b in 0..n * t {
                for i in 0..v {
                    for j in i + 1..v {
                        let w: f64 = rng.gen_range(0.0..1.0);
                        a[b * v * v + i * v + j] = w;
                        a[b * v * v + j * v + i] = w;
                    }
                }
            }
            let a = Tensor::from_vec(&[n, t, v, v], a).unwrap();
            let f = random_tensor(&[n, t, v, v], seed + 1000, -1.0, 1.0);
            let got = eval_vec(|tape| {
                let av = tape.constant(a.clone())?;
                let fv = tape.constant(f.clone())?;
                feature_smoothness(tape, av, fv)
            });
            let expect = fs_oracle(&a, &f);
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e).abs() < 1e-10, "seed {seed}: trace form {g} vs pairwise {e}");
            }
        }
    }

    #[test]
    fn feature_smoothness_zero_for_empty_graph() {
        let got = eval_vec(|tape| {
            let a = tape.constant(Tensor::zeros(&[1, 2, 3, 3]))?;
            let f = tape.constant(random_tensor(&[1, 2, 3, 3], 4, -1.0, 1.0))?;
            feature_smoothness(tape, a, f)
        });
        assert!(got[0].abs() < 1e-12);
    }

    #[test]
    fn feature_smoothness_zero_for_shared_feature_on_regular_graph() {
        // Complete graph (uniform degree) and one shared feature vector:
        // the normalized-Laplacian quadratic form vanishes.
        let v = 4;
        let mut a = vec![1.0; v * v];
        for i in 0..v {
            a[i * v + i] = 0.0;
        }
        let mut f = vec![0.0; v * v];
        for i in 0..v {
            for k in 0..v {
                f[i * v + k] = [0.3, -0.7, 0.2, 0.9][k];
            }
        }
        let got = eval_vec(|tape| {
            let av = tape.constant(Tensor::from_vec(&[1, 1, v, v], a.clone()).unwrap())?;
            let fv = tape.constant(Tensor::from_vec(&[1, 1, v, v], f.clone()).unwrap())?;
            feature_smoothness(tape, av, fv)
        });
        assert!(got[0].abs() < 1e-12, "constant features on a regular graph are smooth: {}", got[0]);
    }

    // -- temporal smoothness and sparsity ----------------------------------------

    #[test]
    fn temporal_smoothness_brute_force() {
        for seed in 0..100 {
            let a = random_tensor(&[2, 4, 3, 3], seed, 0.0, 1.0);
            let got = eval_vec(|tape| {
                let av = tape.constant(a.clone())?;
                temporal_smoothness(tape, av)
            });
            for s in 0..2 {
                let mut expect = 0.0;
                for t in 0..3 {
                    for i in 0..3 {
                        for j in 0..3 {
                            expect += (a.at(&[s, t, i, j]) - a.at(&[s, t + 1, i, j])).abs();
                        }
                    }
                }
                assert!((got[s] - expect).abs() < 1e-10, "seed {seed}");
            }
        }
    }

    #[test]
    fn temporal_smoothness_edge_cases() {
        // Constant sequence → 0.
        let one = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut rep = Vec::new();
        for _ in 0..3 {
            rep.extend_from_slice(one.data());
        }
        let got = eval_vec(|tape| {
            let av = tape.constant(Tensor::from_vec(&[1, 3, 2, 2], rep.clone()).unwrap())?;
            temporal_smoothness(tape, av)
        });
        assert!(got[0].abs() < 1e-12);

        // Single snapshot → 0.
        let got = eval_vec(|tape| {
            let av = tape.constant(random_tensor(&[2, 1, 3, 3], 9, 0.0, 1.0))?;
            temporal_smoothness(tape, av)
        });
        assert!(got.iter().all(|&x| x == 0.0));

        // Two snapshots differing by 0.1 in exactly 3 entries → 0.3.
        let mut b = rep[..4].to_vec();
        b.extend_from_slice(&[0.1 + 0.1, 0.2, 0.3 + 0.1, 0.4 + 0.1]);
        let got = eval_vec(|tape| {
            let av = tape.constant(Tensor::from_vec(&[1, 2, 2, 2], b.clone()).unwrap())?;
            temporal_smoothness(tape, av)
        });
        assert!((got[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn sparsity_penalty_brute_force_and_edges() {
        for seed in 0..100 {
            let a = random_tensor(&[2, 3, 3, 3], seed, 0.0, 1.0);
            let got = eval_vec(|tape| {
                let av = tape.constant(a.clone())?;
                sparsity_penalty(tape, av)
            });
            for s in 0..2 {
                let expect: f64 = (0..3)
                    .flat_map(|t| {
                        let a = &a;
                        (0..9).map(move |ij| a.at(&[s, t, ij / 3, ij % 3]).abs())
                    })
                    .sum();
                assert!((got[s] - expect).abs() < 1e-10, "seed {seed}");
            }
        }
        let got = eval_vec(|tape| {
            let av = tape.constant(Tensor::full(&[1, 2, 3, 3], 1.0))?;
            sparsity_penalty(tape, av)
        });
        assert!((got[0] - 18.0).abs() < 1e-12, "all-ones V×V×T sums to V²·T");
        let got = eval_vec(|tape| {
            let av = tape.constant(Tensor::zeros(&[1, 2, 3, 3]))?;
            sparsity_penalty(tape, av)
        });
        assert!(got[0] == 0.0);
    }

    // -- total loss ---------------------------------------------------------------

    #[test]
    fn total_loss_decomposition_identity() {
        for seed in 0..20 {
            let n = 3;
            let a = random_tensor(&[n, 3, 4, 4], seed, 0.0, 1.0);
            let f = random_tensor(&[n, 3, 4, 4], seed + 500, -1.0, 1.0);
            let mut p = random_tensor(&[n, 2], seed + 900, 0.05, 0.95);
            // Normalize rows into the simplex.
            {
                let data = p.data_mut();
                for row in data.chunks_mut(2) {
                    let s = row[0] + row[1];
                    row[0] /= s;
                    row[1] /= s;
                }
            }
            let labels = [0usize, 1, 0];
            let w = LossWeights { lambda_fs: 0.3, lambda_ts: 0.07, lambda_sp: 0.011 };

            let mut tape = Tape::<f64>::no_grad();
            let pv = tape.constant(p.clone()).unwrap();
            let av = tape.constant(a.clone()).unwrap();
            let fv = tape.constant(f.clone()).unwrap();
            let parts = total_loss(&mut tape, pv, &labels, av, fv, &w).unwrap();
            let total = tape.value(parts.total).item();
            let recomposed = parts.cross_entropy
                + w.lambda_fs * parts.feature_smoothness
                + w.lambda_ts * parts.temporal_smoothness
                + w.lambda_sp * parts.sparsity;
            assert!(
                (total - recomposed).abs() < 1e-12,
                "seed {seed}: total {total} vs parts {recomposed}"
            );
            assert!(parts.cross_entropy >= 0.0);
            assert!(parts.feature_smoothness >= 0.0);
            assert!(parts.temporal_smoothness >= 0.0);
            assert!(parts.sparsity >= 0.0);
        }
    }

    #[test]
    fn total_loss_zero_weights_equal_cross_entropy() {
        let a = random_tensor(&[2, 2, 3, 3], 31, 0.0, 1.0);
        let f = random_tensor(&[2, 2, 3, 3], 32, -1.0, 1.0);
        let p = Tensor::from_vec(&[2, 2], vec![0.25, 0.75, 0.6, 0.4]).unwrap();
        let labels = [1usize, 0];
        let w = LossWeights { lambda_fs: 0.0, lambda_ts: 0.0, lambda_sp: 0.0 };
        let mut tape = Tape::<f64>::no_grad();
        let pv = tape.constant(p).unwrap();
        let av = tape.constant(a).unwrap();
        let fv = tape.constant(f).unwrap();
        let parts = total_loss(&mut tape, pv, &labels, av, fv, &w).unwrap();
        let expect = (-(0.75f64.ln()) + -(0.6f64.ln())) / 2.0;
        assert!((tape.value(parts.total).item() - expect).abs() < 1e-12);
        assert_eq!(parts.feature_smoothness, 0.0);
    }

    #[test]
    fn threshold_parameter_receives_sparsity_gradient() {
        // A thresholded adjacency built on the tape: gradient of the total
        // loss with respect to the threshold must be nonzero when edges
        // survive and λ_SP > 0.
        let mut tape = Tape::<f64>::new();
        let theta = tape.param("theta", &Tensor::scalar(-2.0)).unwrap();
        let raw = tape.constant(random_tensor(&[1, 2, 3, 3], 41, 0.3, 0.9)).unwrap();
        let adj = crate::learner::soft_threshold(&mut tape, raw, theta).unwrap();
        let f = tape.constant(random_tensor(&[1, 2, 3, 3], 42, -1.0, 1.0)).unwrap();
        let p = tape.constant(Tensor::from_vec(&[1, 2], vec![0.3, 0.7]).unwrap()).unwrap();
        let w = LossWeights { lambda_fs: 0.0, lambda_ts: 0.0, lambda_sp: 1e-3 };
        let parts = total_loss(&mut tape, p, &[1], adj, f, &w).unwrap();
        let grads = tape.backward(parts.total).unwrap();
        let g = grads.get("theta").unwrap().item();
        assert!(g != 0.0, "sparsity gradient must reach the threshold");
        assert!(g < 0.0, "raising the threshold lowers the L1 penalty");
    }

    #[test]
    fn gradient_descent_decreases_total_loss() {
        // Smoke property: five plain gradient steps on a fixed tiny batch
        // strictly decrease the loss.
        use crate::params::ParamBank;
        let mut params = ParamBank::<f64>::new();
        params.insert("w", random_tensor(&[4, 2], 51, -0.5, 0.5));
        let x = random_tensor(&[3, 4], 52, -1.0, 1.0);
        let labels = [0usize, 1, 0];
        let a = random_tensor(&[3, 2, 3, 3], 53, 0.0, 1.0);
        let f = random_tensor(&[3, 2, 3, 3], 54, -1.0, 1.0);
        let w = LossWeights::default();
        let eval = |params: &ParamBank<f64>, with_grad: bool| -> (f64, Option<Tensor<f64>>) {
            let mut tape = if with_grad { Tape::new() } else { Tape::no_grad() };
            let wv = params.var(&mut tape, "w").unwrap();
            let xv = tape.constant(x.clone()).unwrap();
            let logits = tape.matmul(xv, wv).unwrap();
            let probs = tape.softmax(logits, 1).unwrap();
            let av = tape.constant(a.clone()).unwrap();
            let fv = tape.constant(f.clone()).unwrap();
            let parts = total_loss(&mut tape, probs, &labels, av, fv, &w).unwrap();
            let val = tape.value(parts.total).item();
            if with_grad {
                let grads = tape.backward(parts.total).unwrap();
                (val, Some(grads.get("w").unwrap().clone()))
            } else {
                (val, None)
            }
        };
        let mut prev = f64::INFINITY;
        for step in 0..5 {
            let (val, grad) = eval(&params, true);
            assert!(val < prev, "step {step}: loss must decrease ({val} !< {prev})");
            prev = val;
            let g = grad.unwrap();
            let wt = params.get_mut("w");
            let lr = 0.5;
            let updated: Vec<f64> =
                wt.data().iter().zip(g.data()).map(|(w, g)| w - lr * g).collect();
            *wt = Tensor::from_vec(&[4, 2], updated).unwrap();
        }
    }
}
