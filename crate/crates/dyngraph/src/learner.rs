//! Dynamic graph learner: slices a multivariate signal into overlapping
//! windows, embeds each region's windowed history with an inception-style
//! dilated causal TCN, turns the embeddings into a per-window adjacency
//! matrix via scaled dot-product self-attention, sparsifies it with a
//! learnable soft threshold, and pairs it with windowed correlation node
//! features.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BnStates, ParamBank};
use crate::tensor::batchnorm::batch_norm;
use crate::tensor::init::{conv_fans, glorot_uniform, linear_fans};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Batch-norm settings used by every TCN layer.
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Variance below this counts as a constant region when computing
/// windowed correlations.
const VAR_EPS: f64 = 1e-8;

/// Initial value of the raw threshold parameter; sigmoid(-10) ≈ 4.54e-5, so
/// training starts with effectively no edges removed.
const THRESHOLD_INIT: f64 = -10.0;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Hyperparameters of the graph learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    /// Number of signal regions (graph nodes), V.
    pub regions: usize,
    /// Window length P (samples per snapshot).
    pub window: usize,
    /// Window stride S.
    pub stride: usize,
    /// TCN layer count; layer l uses dilation 2^(l-1).
    pub layers: usize,
    /// Embedding channels K_E produced by every TCN layer.
    pub embed_dim: usize,
    /// Kernel lengths of the parallel branches, strictly increasing.
    pub kernel_lens: Vec<usize>,
    /// Attention projection width K_S.
    pub attn_dim: usize,
    /// Tie the key projection to the query projection so the adjacency is
    /// exactly symmetric.
    pub undirected: bool,
    /// When false, each TCN layer is a single causal convolution with kernel
    /// length 4 instead of parallel multi-scale branches.
    pub use_inception: bool,
    /// When false, the learned attention adjacency is replaced with windowed
    /// Pearson correlations mapped to [0,1] via (r+1)/2.
    pub use_self_attention: bool,
    /// When false, the soft threshold is skipped and the adjacency keeps
    /// every (nonzero) attention weight.
    pub use_sparsity: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            regions: 16,
            window: 50,
            stride: 3,
            layers: 4,
            embed_dim: 64,
            kernel_lens: vec![4, 8, 16],
            attn_dim: 16,
            undirected: true,
            use_inception: true,
            use_self_attention: true,
            use_sparsity: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regions < 2 {
            return Err(Error::config("learner.regions must be at least 2"));
        }
        if self.window < 2 {
            return Err(Error::config("learner.window must be at least 2"));
        }
        if self.stride == 0 {
            return Err(Error::config("learner.stride must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::config("learner.layers must be at least 1"));
        }
        if self.embed_dim == 0 || self.attn_dim == 0 {
            return Err(Error::config("learner.embed_dim and learner.attn_dim must be positive"));
        }
        if self.use_inception {
            if self.kernel_lens.is_empty() {
                return Err(Error::config("learner.kernel_lens must not be empty"));
            }
            if !self.kernel_lens.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::config("learner.kernel_lens must be strictly increasing"));
            }
            if self.kernel_lens[0] == 0 {
                return Err(Error::config("learner.kernel_lens must be positive"));
            }
            if self.embed_dim < self.kernel_lens.len() {
                return Err(Error::config(
                    "learner.embed_dim must be at least the number of branches",
                ));
            }
        }
        Ok(())
    }

    /// Per-layer branch plan as (channels, kernel length) pairs. The channel
    /// remainder goes to the last (longest-kernel) branch so the concatenated
    /// output has exactly `embed_dim` channels.
    pub fn branch_plan(&self) -> Vec<(usize, usize)> {
        if !self.use_inception {
            return vec![(self.embed_dim, 4)];
        }
        let m = self.kernel_lens.len();
        let base = self.embed_dim / m;
        let rem = self.embed_dim % m;
        self.kernel_lens
            .iter()
            .enumerate()
            .map(|(i, &k)| (if i + 1 == m { base + rem } else { base }, k))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Number of windows carved out of a series of `series_len` samples.
///
/// Implements T = ⌊(T' − 2(P−1) − 1)/S + 1⌋ in integer arithmetic. This is
/// deliberately fewer than the maximal sliding-window count: the trailing
/// region of the series is left uncovered by construction, and the formula
/// requires T' ≥ 2P−1 for even a single window.
pub fn window_count(series_len: usize, window: usize, stride: usize) -> Result<usize> {
    if window < 2 {
        return Err(Error::config("window length must be at least 2"));
    }
    if stride == 0 {
        return Err(Error::config("window stride must be positive"));
    }
    if series_len + 1 < 2 * window {
        return Err(Error::config(format!(
            "series length {series_len} is too short: need at least 2*window-1 = {} samples",
            2 * window - 1
        )));
    }
    Ok((series_len - 2 * (window - 1) - 1) / stride + 1)
}

/// Slice a batch of signals (N, V, T') into stacked windows (N, P, V, T);
/// window t covers samples [t·S, t·S+P).
pub fn split_windows<S: Scalar>(x: &Tensor<S>, window: usize, stride: usize) -> Result<Tensor<S>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape("split_windows", format!("expected (N,V,T'), got {shape:?}")));
    }
    let (n, v, series_len) = (shape[0], shape[1], shape[2]);
    let t_count = window_count(series_len, window, stride)?;
    let mut out = vec![S::zero(); n * window * v * t_count];
    let src = x.data();
    for i in 0..n {
        for p in 0..window {
            for r in 0..v {
                let src_row = (i * v + r) * series_len;
                let dst_row = ((i * window + p) * v + r) * t_count;
                for t in 0..t_count {
                    out[dst_row + t] = src[src_row + t * stride + p];
                }
            }
        }
    }
    Tensor::from_vec(&[n, window, v, t_count], out)
}

// ---------------------------------------------------------------------------
// Node features: windowed Pearson correlation
// ---------------------------------------------------------------------------

/// Per-window Pearson correlation matrices. Input is stacked windows
/// (N, P, V, T); output is (N, T, V, V) with entries clamped to [−1, 1].
/// Regions whose windowed variance is at most 1e-8 produce zero rows and
/// columns; every diagonal entry is 1.
pub fn node_features<S: Scalar>(windows: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = windows.shape();
    if shape.len() != 4 {
        return Err(Error::shape("node_features", format!("expected (N,P,V,T), got {shape:?}")));
    }
    let (n, p, v, t_count) = (shape[0], shape[1], shape[2], shape[3]);
    if p < 2 {
        return Err(Error::invalid("node_features", "window length must be at least 2"));
    }
    let src = windows.data();
    let mut out = vec![S::zero(); n * t_count * v * v];
    // Scratch: the window transposed to region-major columns, in f64.
    let mut cols = vec![0.0f64; v * p];
    let mut sd = vec![0.0f64; v];
    let mut degenerate = vec![false; v];
    for i in 0..n {
        for t in 0..t_count {
            for r in 0..v {
                let col = &mut cols[r * p..(r + 1) * p];
                for (q, c) in col.iter_mut().enumerate() {
                    *c = src[((i * p + q) * v + r) * t_count + t].to_f64_();
                }
                let mean = col.iter().sum::<f64>() / p as f64;
                let mut ss = 0.0;
                for c in col.iter_mut() {
                    *c -= mean;
                    ss += *c * *c;
                }
                let var = ss / (p - 1) as f64;
                degenerate[r] = var <= VAR_EPS;
                sd[r] = ss.sqrt().max(VAR_EPS);
            }
            let block = &mut out[(i * t_count + t) * v * v..(i * t_count + t + 1) * v * v];
            for a in 0..v {
                block[a * v + a] = S::one();
                if degenerate[a] {
                    continue;
                }
                for b in a + 1..v {
                    if degenerate[b] {
                        continue;
                    }
                    let ca = &cols[a * p..(a + 1) * p];
                    let cb = &cols[b * p..(b + 1) * p];
                    let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                    let r = (dot / (sd[a] * sd[b])).clamp(-1.0, 1.0);
                    block[a * v + b] = S::from_f64(r);
                    block[b * v + a] = S::from_f64(r);
                }
            }
        }
    }
    Tensor::from_vec(&[n, t_count, v, v], out)
}

/// Map correlations in [−1,1] to [0,1] via (r+1)/2. Used by the
/// correlation-adjacency ablation and the interpretability baseline.
pub fn map_unit_interval<S: Scalar>(corr: &Tensor<S>) -> Tensor<S> {
    let half = S::from_f64(0.5);
    corr.map(|x| (x + S::one()) * half)
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

fn layer_in_channels(cfg: &LearnerConfig, layer: usize) -> usize {
    if layer == 0 {
        cfg.window
    } else {
        cfg.embed_dim
    }
}

/// Register all learner parameters and batch-norm sites. Draw order is fixed
/// so a given seed always produces the same initialization.
pub fn init_learner_params<S: Scalar>(
    cfg: &LearnerConfig,
    params: &mut ParamBank<S>,
    bn: &mut BnStates<S>,
    rng: &mut ChaCha8Rng,
) {
    if cfg.use_self_attention {
        for l in 0..cfg.layers {
            let c_in = layer_in_channels(cfg, l);
            for (m, &(ch, k)) in cfg.branch_plan().iter().enumerate() {
                let shape = [ch, c_in, 1, k];
                let (fi, fo) = conv_fans(&shape);
                params.insert(
                    format!("learner.itcn.{l}.branch.{m}.w"),
                    glorot_uniform(rng, &shape, fi, fo),
                );
                params.insert(format!("learner.itcn.{l}.branch.{m}.b"), Tensor::zeros(&[ch]));
            }
            if l == 0 {
                let shape = [cfg.embed_dim, c_in, 1, 1];
                let (fi, fo) = conv_fans(&shape);
                params.insert("learner.itcn.0.proj.w", glorot_uniform(rng, &shape, fi, fo));
                params.insert("learner.itcn.0.proj.b", Tensor::zeros(&[cfg.embed_dim]));
            }
            params.insert(format!("learner.itcn.{l}.bn.gamma"), Tensor::full(&[cfg.embed_dim], S::one()));
            params.insert(format!("learner.itcn.{l}.bn.beta"), Tensor::zeros(&[cfg.embed_dim]));
            bn.insert(format!("learner.itcn.{l}.bn"), cfg.embed_dim);
        }
        let shape = [cfg.embed_dim, cfg.attn_dim];
        let (fi, fo) = linear_fans(&shape);
        params.insert("learner.attn.wq", glorot_uniform(rng, &shape, fi, fo));
        if !cfg.undirected {
            params.insert("learner.attn.wk", glorot_uniform(rng, &shape, fi, fo));
        }
    }
    if cfg.use_sparsity {
        params.insert("learner.threshold", Tensor::scalar(S::from_f64(THRESHOLD_INIT)));
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Inception TCN over stacked windows. Input (N, P, V, T) → output
/// (N, K_E, V, T). Each layer runs its branches as dilated causal
/// convolutions, concatenates them, adds the residual (a learned 1×1
/// projection on layer 1), then applies batch norm and ReLU.
pub fn itcn_forward<S: Scalar>(
    cfg: &LearnerConfig,
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    bn: &mut BnStates<S>,
    windows: Var,
    training: bool,
) -> Result<Var> {
    let mut h = windows;
    for l in 0..cfg.layers {
        let dilation = 1usize << l;
        let mut branch_outs = Vec::new();
        for (m, _) in cfg.branch_plan().iter().enumerate() {
            let w = params.var(tape, &format!("learner.itcn.{l}.branch.{m}.w"))?;
            let b = params.var(tape, &format!("learner.itcn.{l}.branch.{m}.b"))?;
            branch_outs.push(tape.causal_conv2d(h, w, b, dilation)?);
        }
        let cat = if branch_outs.len() == 1 {
            branch_outs[0]
        } else {
            tape.concat(&branch_outs, 1)?
        };
        let residual = if l == 0 {
            let w = params.var(tape, "learner.itcn.0.proj.w")?;
            let b = params.var(tape, "learner.itcn.0.proj.b")?;
            tape.causal_conv2d(h, w, b, 1)?
        } else {
            h
        };
        let summed = tape.add(cat, residual)?;
        let gamma = params.var(tape, &format!("learner.itcn.{l}.bn.gamma"))?;
        let beta = params.var(tape, &format!("learner.itcn.{l}.bn.beta"))?;
        let site = format!("learner.itcn.{l}.bn");
        let normed =
            batch_norm(tape, summed, gamma, beta, bn.get_mut(&site), training, BN_EPS, BN_MOMENTUM)?;
        h = tape.relu(normed)?;
    }
    Ok(h)
}

/// Scaled dot-product self-attention adjacency. Input embeddings
/// (N, K_E, V, T) → adjacency (N, T, V, V) with entries sigmoid(QKᵀ/√K_S).
/// In undirected mode the key projection aliases the query projection, which
/// makes every snapshot exactly symmetric.
pub fn attention_adjacency<S: Scalar>(
    cfg: &LearnerConfig,
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    embeddings: Var,
) -> Result<Var> {
    let shape = tape.value(embeddings).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(
            "attention_adjacency",
            format!("expected (N,K_E,V,T), got {shape:?}"),
        ));
    }
    let (n, k_e, v, t_count) = (shape[0], shape[1], shape[2], shape[3]);
    // (N, K_E, V, T) → (N, T, V, K_E) → (N·T, V, K_E)
    let perm = tape.transpose(embeddings, &[0, 3, 2, 1])?;
    let flat = tape.reshape(perm, &[n * t_count, v, k_e])?;
    let wq = params.var(tape, "learner.attn.wq")?;
    let q = tape.bmm(flat, wq)?;
    let k = if cfg.undirected {
        q
    } else {
        let wk = params.var(tape, "learner.attn.wk")?;
        tape.bmm(flat, wk)?
    };
    let kt = tape.transpose(k, &[0, 2, 1])?;
    let logits = tape.bmm(q, kt)?;
    let scaled = tape.mul_scalar(logits, S::from_f64(1.0 / (cfg.attn_dim as f64).sqrt()))?;
    let adj = tape.sigmoid(scaled)?;
    tape.reshape(adj, &[n, t_count, v, v])
}

/// Shrink-and-zero each edge weight: ReLU(a − sigmoid(threshold)). Entries at
/// or below the cutoff become exact zeros; the threshold parameter receives
/// gradients through the surviving entries.
pub fn soft_threshold<S: Scalar>(tape: &mut Tape<S>, adj: Var, threshold: Var) -> Result<Var> {
    let cut = tape.sigmoid(threshold)?;
    let shifted = tape.sub(adj, cut)?;
    tape.relu(shifted)
}

/// Everything the learner produces for one batch, on the tape.
pub struct LearnerOutput {
    /// Adjacency sequence (N, T, V, V); thresholded when sparsity is on.
    pub adjacency: Var,
    /// Node-feature sequence (N, T, V, V): windowed correlations, entered
    /// into the graph as constants (no parameters upstream).
    pub features: Var,
}

/// Full learner forward over a batch of raw signals (N, V, T').
pub fn learner_forward<S: Scalar>(
    cfg: &LearnerConfig,
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    bn: &mut BnStates<S>,
    x: &Tensor<S>,
    training: bool,
) -> Result<LearnerOutput> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != cfg.regions {
        return Err(Error::shape(
            "learner_forward",
            format!("expected (N,{},T'), got {shape:?}", cfg.regions),
        ));
    }
    let windows = split_windows(x, cfg.window, cfg.stride)?;
    let corr = node_features(&windows)?;
    let raw = if cfg.use_self_attention {
        let wvar = tape.constant(windows)?;
        let emb = itcn_forward(cfg, tape, params, bn, wvar, training)?;
        attention_adjacency(cfg, tape, params, emb)?
    } else {
        tape.constant(map_unit_interval(&corr))?
    };
    let features = tape.constant(corr)?;
    let adjacency = if cfg.use_sparsity {
        let theta = params.var(tape, "learner.threshold")?;
        soft_threshold(tape, raw, theta)?
    } else {
        raw
    };
    Ok(LearnerOutput { adjacency, features })
}

/// A learned dynamic graph for a single signal, off the tape.
#[derive(Debug, Clone)]
pub struct DynamicGraph<S: Scalar> {
    /// Adjacency sequence, shape (V, V, T).
    pub adjacency: Tensor<S>,
    /// Node features (windowed correlations), shape (V, V, T).
    pub features: Tensor<S>,
}

/// Build the dynamic graph for one signal (V, T') in evaluation mode
/// (batch-norm running statistics, no gradients recorded).
pub fn build_dynamic_graph<S: Scalar>(
    cfg: &LearnerConfig,
    params: &ParamBank<S>,
    bn: &BnStates<S>,
    x: &Tensor<S>,
) -> Result<DynamicGraph<S>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::shape("build_dynamic_graph", format!("expected (V,T'), got {shape:?}")));
    }
    let batched = x.reshaped(&[1, shape[0], shape[1]])?;
    let mut tape = Tape::no_grad();
    let mut bn_eval = bn.clone();
    let out = learner_forward(cfg, &mut tape, params, &mut bn_eval, &batched, false)?;
    let t_count = tape.value(out.adjacency).shape()[1];
    let v = shape[0];
    // (1, T, V, V) → (T, V, V) → (V, V, T)
    let adjacency = tape.value(out.adjacency).reshaped(&[t_count, v, v])?.permuted(&[1, 2, 0])?;
    let features = tape.value(out.features).reshaped(&[t_count, v, v])?.permuted(&[1, 2, 0])?;
    Ok(DynamicGraph { adjacency, features })
}

// ---------------------------------------------------------------------------
