//! Dynamic-graph classifier: a stack of graph-convolution-gated GRU layers
//! unrolled over the snapshot sequence, mean-pooled over nodes, weighted by a
//! squeeze-and-excite temporal attention score, and read out through a
//! softmax layer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamBank;
use crate::tensor::init::{glorot_uniform, linear_fans};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Degrees are floored at this value before the inverse square root so
/// isolated nodes stay finite.
const DEGREE_EPS: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Hyperparameters of the graph classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Recurrent layer count L_C.
    pub layers: usize,
    /// Hidden width K_C of every recurrent layer.
    pub hidden_dim: usize,
    /// Attention bottleneck ratio τ ∈ (0,1]; the bottleneck width is ⌈τ·T⌉.
    pub bottleneck: f64,
    /// Number of classes C.
    pub classes: usize,
    /// When false, snapshots are summed unweighted instead of attention-weighted.
    pub use_temporal_attention: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            layers: 3,
            hidden_dim: 64,
            bottleneck: 0.5,
            classes: 2,
            use_temporal_attention: true,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("classifier.layers must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::config("classifier.hidden_dim must be positive"));
        }
        if !(self.bottleneck > 0.0 && self.bottleneck <= 1.0) {
            return Err(Error::config("classifier.bottleneck must lie in (0, 1]"));
        }
        if self.classes < 2 {
            return Err(Error::config("classifier.classes must be at least 2"));
        }
        Ok(())
    }

    /// Bottleneck width of the temporal attention for a given snapshot count.
    pub fn bottleneck_dim(&self, snapshots: usize) -> usize {
        ((self.bottleneck * snapshots as f64).ceil() as usize).max(1)
    }
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

const GATES: [&str; 3] = ["reset", "update", "cand"];

/// Register all classifier parameters. `regions` is the node count V (layer
/// 1's input width, since node features have V columns) and `snapshots` is
/// the fixed sequence length T the temporal attention is sized for.
pub fn init_classifier_params<S: Scalar>(
    cfg: &ClassifierConfig,
    regions: usize,
    snapshots: usize,
    params: &mut ParamBank<S>,
    rng: &mut ChaCha8Rng,
) {
    for l in 0..cfg.layers {
        let d_in = if l == 0 { regions } else { cfg.hidden_dim };
        for gate in GATES {
            let shape = [d_in + cfg.hidden_dim, cfg.hidden_dim];
            let (fi, fo) = linear_fans(&shape);
            params.insert(
                format!("clf.gru.{l}.{gate}.w"),
                glorot_uniform(rng, &shape, fi, fo),
            );
            params.insert(format!("clf.gru.{l}.{gate}.b"), Tensor::zeros(&[cfg.hidden_dim]));
        }
    }
    if cfg.use_temporal_attention {
        let bott = cfg.bottleneck_dim(snapshots);
        let s1 = [snapshots, bott];
        let (fi, fo) = linear_fans(&s1);
        params.insert("clf.attn.w1", glorot_uniform(rng, &s1, fi, fo));
        let s2 = [bott, snapshots];
        let (fi, fo) = linear_fans(&s2);
        params.insert("clf.attn.w2", glorot_uniform(rng, &s2, fi, fo));
    }
    let s3 = [cfg.hidden_dim * cfg.layers, cfg.classes];
    let (fi, fo) = linear_fans(&s3);
    params.insert("clf.readout.w", glorot_uniform(rng, &s3, fi, fo));
}

// ---------------------------------------------------------------------------
// Graph convolution and the gated recurrence
// ---------------------------------------------------------------------------

/// Symmetrically normalized adjacency with self-edges, batched over leading
/// axes: Â = A + I, D̂ = diag(Â·𝟙), returns D̂^{−1/2} Â D̂^{−1/2}. Input and
/// output shape (..., V, V).
pub fn normalized_adjacency<S: Scalar>(tape: &mut Tape<S>, adj: Var) -> Result<Var> {
    let shape = tape.value(adj).shape().to_vec();
    let rank = shape.len();
    if rank < 2 || shape[rank - 1] != shape[rank - 2] {
        return Err(Error::shape(
            "normalized_adjacency",
            format!("expected square trailing axes, got {shape:?}"),
        ));
    }
    let v = shape[rank - 1];
    let eye = tape.constant(Tensor::eye(v))?;
    let hat = tape.add(adj, eye)?;
    let deg = tape.sum_axes(hat, &[rank - 1], true)?;
    let floored = tape.max_scalar(deg, S::from_f64(DEGREE_EPS))?;
    let root = tape.sqrt(floored)?;
    let inv_col = tape.scalar_div(S::one(), root)?;
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(rank - 1, rank - 2);
    let inv_row = tape.transpose(inv_col, &perm)?;
    let scaled = tape.mul(hat, inv_col)?;
    tape.mul(scaled, inv_row)
}

/// One graph-convolution gate: returns D̂^{−1/2}ÂD̂^{−1/2}·X·W + b, where
/// `norm_adj` is the pre-normalized adjacency (N, V, V), `x` is (N, V, D_in),
/// `w` is (D_in, K) and `b` is (K,).
pub fn gcn_gate<S: Scalar>(
    tape: &mut Tape<S>,
    norm_adj: Var,
    x: Var,
    w: Var,
    b: Var,
) -> Result<Var> {
    let propagated = tape.bmm(norm_adj, x)?;
    let projected = tape.bmm(propagated, w)?;
    tape.add(projected, b)
}

/// The pieces of one recurrent step, kept for inspection in tests.
pub struct GruStep {
    pub state: Var,
    pub reset: Var,
    pub update: Var,
    pub candidate: Var,
}

/// One GCN-gated GRU step for layer `layer`: `x` (N, V, D_in) is the layer
/// input at this snapshot, `h` (N, V, K_C) the previous state, `norm_adj`
/// the normalized adjacency (N, V, V).
pub fn gru_cell<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    layer: usize,
    norm_adj: Var,
    x: Var,
    h: Var,
) -> Result<GruStep> {
    let gate = |tape: &mut Tape<S>, name: &str, input: Var| -> Result<Var> {
        let w = params.var(tape, &format!("clf.gru.{layer}.{name}.w"))?;
        let b = params.var(tape, &format!("clf.gru.{layer}.{name}.b"))?;
        gcn_gate(tape, norm_adj, input, w, b)
    };
    let xh = tape.concat(&[x, h], 2)?;
    let reset_pre = gate(tape, "reset", xh)?;
    let reset = tape.sigmoid(reset_pre)?;
    let update_pre = gate(tape, "update", xh)?;
    let update = tape.sigmoid(update_pre)?;
    let gated_h = tape.mul(reset, h)?;
    let x_gated = tape.concat(&[x, gated_h], 2)?;
    let cand_pre = gate(tape, "cand", x_gated)?;
    let candidate = tape.tanh(cand_pre)?;
    let keep = tape.mul(update, h)?;
    let fresh_w = tape.scalar_sub(S::one(), update)?;
    let fresh = tape.mul(fresh_w, candidate)?;
    let state = tape.add(keep, fresh)?;
    Ok(GruStep { state, reset, update, candidate })
}

/// Unroll all recurrent layers over the snapshot sequence. `adjacency` and
/// `features` are (N, T, V, V); the result is indexed `[t][layer]`, each
/// entry the layer's node embeddings (N, V, K_C) at that snapshot. Initial
/// states are zero.
pub fn encode_sequence<S: Scalar>(
    cfg: &ClassifierConfig,
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    adjacency: Var,
    features: Var,
) -> Result<Vec<Vec<Var>>> {
    let ashape = tape.value(adjacency).shape().to_vec();
    let fshape = tape.value(features).shape().to_vec();
    if ashape.len() != 4 || ashape[2] != ashape[3] {
        return Err(Error::shape(
            "encode_sequence",
            format!("adjacency must be (N,T,V,V), got {ashape:?}"),
        ));
    }
    if fshape != ashape {
        return Err(Error::shape(
            "encode_sequence",
            format!("features {fshape:?} must match adjacency {ashape:?}"),
        ));
    }
    let (n, t_count, v) = (ashape[0], ashape[1], ashape[2]);
    let norm = normalized_adjacency(tape, adjacency)?;
    let mut states: Vec<Var> = (0..cfg.layers)
        .map(|_| tape.constant(Tensor::zeros(&[n, v, cfg.hidden_dim])))
        .collect::<Result<_>>()?;
    let mut by_time = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let adj_t = tape.slice(norm, 1, t, 1)?;
        let adj_t = tape.reshape(adj_t, &[n, v, v])?;
        let feat_t = tape.slice(features, 1, t, 1)?;
        let mut input = tape.reshape(feat_t, &[n, v, v])?;
        let mut layer_states = Vec::with_capacity(cfg.layers);
        for (l, state) in states.iter_mut().enumerate() {
            let step = gru_cell(tape, params, l, adj_t, input, *state)?;
            *state = step.state;
            input = step.state;
            layer_states.push(step.state);
        }
        by_time.push(layer_states);
    }
    Ok(by_time)
}

/// Concatenate the per-layer embeddings on the feature axis and average over
/// nodes, per snapshot; stacks the result into (N, T, K_C·L_C).
pub fn pool_nodes<S: Scalar>(tape: &mut Tape<S>, encoded: &[Vec<Var>]) -> Result<Var> {
    let mut pooled = Vec::with_capacity(encoded.len());
    for layer_states in encoded {
        let cat = if layer_states.len() == 1 {
            layer_states[0]
        } else {
            tape.concat(layer_states, 2)?
        };
        pooled.push(tape.mean_axes(cat, &[1], false)?);
    }
    tape.stack(&pooled, 1)
}

/// Squeeze-and-excite temporal attention: mean over features, a bottleneck
/// projection with ReLU, an expansion back to T, and a sigmoid. Input
/// (N, T, F) → scores (N, T) in (0,1).
pub fn temporal_attention<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    pooled: Var,
) -> Result<Var> {
    let shape = tape.value(pooled).shape().to_vec();
    let w1 = params.var(tape, "clf.attn.w1")?;
    let t_trained = tape.value(w1).shape()[0];
    if shape[1] != t_trained {
        return Err(Error::invalid(
            "temporal_attention",
            format!("sequence length {} does not match the trained length {t_trained}", shape[1]),
        ));
    }
    let squeezed = tape.mean_axes(pooled, &[2], false)?;
    let z1 = tape.matmul(squeezed, w1)?;
    let z1 = tape.relu(z1)?;
    let w2 = params.var(tape, "clf.attn.w2")?;
    let z2 = tape.matmul(z1, w2)?;
    tape.sigmoid(z2)
}

/// Attention-weighted sum over snapshots: h_G = Σ_t α_t·H_t. `pooled` is
/// (N, T, F), `alpha` (N, T); returns (N, F).
pub fn graph_representation<S: Scalar>(
    tape: &mut Tape<S>,
    pooled: Var,
    alpha: Var,
) -> Result<Var> {
    let a3 = tape.unsqueeze(alpha, 2)?;
    let weighted = tape.mul(pooled, a3)?;
    tape.sum_axes(weighted, &[1], false)
}

/// Class probabilities: softmax(h_G·W). `rep` is (N, F); returns (N, C).
pub fn predict_proba<S: Scalar>(tape: &mut Tape<S>, params: &ParamBank<S>, rep: Var) -> Result<Var> {
    let w = params.var(tape, "clf.readout.w")?;
    let logits = tape.matmul(rep, w)?;
    tape.softmax(logits, 1)
}

/// Everything the classifier produces for one batch.
pub struct ClassifierOutput {
    /// Class probabilities (N, C).
    pub probs: Var,
    /// Temporal attention scores (N, T); all-ones under the ablation.
    pub alpha: Var,
}

/// Full classifier forward: encode, pool, weight, read out.
pub fn classifier_forward<S: Scalar>(
    cfg: &ClassifierConfig,
    tape: &mut Tape<S>,
    params: &ParamBank<S>,
    adjacency: Var,
    features: Var,
) -> Result<ClassifierOutput> {
    let encoded = encode_sequence(cfg, tape, params, adjacency, features)?;
    let pooled = pool_nodes(tape, &encoded)?;
    let shape = tape.value(pooled).shape().to_vec();
    let alpha = if cfg.use_temporal_attention {
        temporal_attention(tape, params, pooled)?
    } else {
        tape.constant(Tensor::full(&[shape[0], shape[1]], S::one()))?
    };
    let rep = graph_representation(tape, pooled, alpha)?;
    let probs = predict_proba(tape, params, rep)?;
    Ok(ClassifierOutput { probs, alpha })
}

/// Predicted label per row: argmax with ties broken by the lowest index.
pub fn argmax_labels<S: Scalar>(probs: &Tensor<S>) -> Vec<usize> {
    let shape = probs.shape();
    let classes = shape[shape.len() - 1];
    probs
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0usize;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

// ---------------------------------------------------------------------------
