//! The full model: dynamic-graph learner feeding the snapshot classifier.
//!
//! Owns the parameter bank and batch-norm state, wires the two stages
//! together for batched forward/loss/predict, and provides a whole-model
//! finite-difference gradient audit that covers every trainable parameter
//! through the complete objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{
    argmax_labels, classifier_forward, init_classifier_params, ClassifierConfig,
};
use crate::error::{Error, Result};
use crate::learner::{
    build_dynamic_graph, init_learner_params, learner_forward, window_count, DynamicGraph,
    LearnerConfig,
};
use crate::objective::{total_loss, LossParts, LossWeights};
use crate::params::{BnStates, ParamBank};
use crate::tensor::check::{compare_grads, finite_diff_grads, GradCheckReport};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// RNG stream reserved for parameter initialization.
pub const INIT_STREAM: u64 = 0;

/// RNG stream for the gradient audit's probe inputs.
const GRADCHECK_STREAM: u64 = 9;

/// Learner + classifier with their parameters and batch-norm state.
#[derive(Clone)]
pub struct Model<S: Scalar> {
    pub learner: LearnerConfig,
    pub classifier: ClassifierConfig,
    pub params: ParamBank<S>,
    pub bn: BnStates<S>,
    /// Length T' of the input series the model was sized for. The temporal
    /// attention weights are shaped by the window count of this length, so
    /// inputs of any other length are rejected.
    pub series_len: usize,
}

/// On-tape results of one batched forward pass.
pub struct ModelOutput {
    /// Class probabilities, (N, C).
    pub probs: Var,
    /// Thresholded dynamic adjacency, (N, T, V, V).
    pub adjacency: Var,
    /// Node features (windowed correlations), (N, T, V, V).
    pub features: Var,
    /// Snapshot attention scores, (N, T).
    pub alpha: Var,
}

/// Everything the model has to say about a single signal, off the tape.
#[derive(Debug, Clone)]
pub struct Explanation<S: Scalar> {
    pub graph: DynamicGraph<S>,
    /// Snapshot attention scores, length T.
    pub alpha: Vec<S>,
    /// Class probabilities, length C.
    pub probs: Vec<S>,
    pub predicted: usize,
}

impl<S: Scalar> Model<S> {
    /// Initialize parameters from a seed. Draws are made on a dedicated RNG
    /// stream, learner first, so a given (seed, config) pair always produces
    /// the same parameters.
    pub fn init(
        learner: LearnerConfig,
        classifier: ClassifierConfig,
        series_len: usize,
        seed: u64,
    ) -> Result<Self> {
        learner.validate()?;
        classifier.validate()?;
        let snapshots = window_count(series_len, learner.window, learner.stride)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut params = ParamBank::new();
        let mut bn = BnStates::new();
        init_learner_params(&learner, &mut params, &mut bn, &mut rng);
        init_classifier_params(&classifier, learner.regions, snapshots, &mut params, &mut rng);
        Ok(Model { learner, classifier, params, bn, series_len })
    }

    /// Number of graph snapshots per sample.
    pub fn snapshots(&self) -> usize {
        window_count(self.series_len, self.learner.window, self.learner.stride)
            .expect("validated at init")
    }

    /// Total count of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Batched forward pass on `x` of shape (N, V, T'). In training mode the
    /// batch-norm running statistics are updated in place.
    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>, training: bool) -> Result<ModelOutput> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.series_len {
            return Err(Error::shape(
                "model_forward",
                format!("expected (N,V,{}), got {shape:?}", self.series_len),
            ));
        }
        let out = learner_forward(&self.learner, tape, &self.params, &mut self.bn, x, training)?;
        let clf =
            classifier_forward(&self.classifier, tape, &self.params, out.adjacency, out.features)?;
        Ok(ModelOutput {
            probs: clf.probs,
            adjacency: out.adjacency,
            features: out.features,
            alpha: clf.alpha,
        })
    }

    /// Forward pass plus the full objective on one batch.
    pub fn batch_loss(
        &mut self,
        tape: &mut Tape<S>,
        x: &Tensor<S>,
        labels: &[usize],
        weights: &LossWeights,
        training: bool,
    ) -> Result<(ModelOutput, LossParts<S>)> {
        let out = self.forward(tape, x, training)?;
        let parts = total_loss(tape, out.probs, labels, out.adjacency, out.features, weights)?;
        Ok((out, parts))
    }

    /// Predicted labels and class probabilities for a batch, in evaluation
    /// mode (no gradients, batch-norm running statistics). Requires at least
    /// one prior training-mode forward so the statistics exist.
    pub fn predict(&self, x: &Tensor<S>) -> Result<(Vec<usize>, Tensor<S>)> {
        let mut tape = Tape::no_grad();
        let mut bn = self.bn.clone();
        let out = learner_forward(&self.learner, &mut tape, &self.params, &mut bn, x, false)?;
        let clf =
            classifier_forward(&self.classifier, &mut tape, &self.params, out.adjacency, out.features)?;
        let probs = tape.value(clf.probs).clone();
        Ok((argmax_labels(&probs), probs))
    }

    /// The learned dynamic graph for one signal of shape (V, T').
    pub fn dynamic_graph(&self, x: &Tensor<S>) -> Result<DynamicGraph<S>> {
        build_dynamic_graph(&self.learner, &self.params, &self.bn, x)
    }

    /// Full interpretability bundle for one signal of shape (V, T'): the
    /// dynamic graph, the snapshot attention, and the prediction.
    pub fn explain(&self, x: &Tensor<S>) -> Result<Explanation<S>> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::shape("explain", format!("expected (V,T'), got {shape:?}")));
        }
        let v = shape[0];
        let batched = x.reshaped(&[1, v, shape[1]])?;
        let mut tape = Tape::no_grad();
        let mut bn = self.bn.clone();
        let out = learner_forward(&self.learner, &mut tape, &self.params, &mut bn, &batched, false)?;
        let clf =
            classifier_forward(&self.classifier, &mut tape, &self.params, out.adjacency, out.features)?;
        let t_count = tape.value(out.adjacency).shape()[1];
        // (1, T, V, V) → (V, V, T)
        let adjacency =
            tape.value(out.adjacency).reshaped(&[t_count, v, v])?.permuted(&[1, 2, 0])?;
        let features = tape.value(out.features).reshaped(&[t_count, v, v])?.permuted(&[1, 2, 0])?;
        let probs_t = tape.value(clf.probs);
        let predicted = argmax_labels(probs_t)[0];
        Ok(Explanation {
            graph: DynamicGraph { adjacency, features },
            alpha: tape.value(clf.alpha).data().to_vec(),
            probs: probs_t.data().to_vec(),
            predicted,
        })
    }
}

// ---------------------------------------------------------------------------
// Whole-model gradient audit
// ---------------------------------------------------------------------------

/// Settings for the whole-model gradient audit.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Probe batch size (labels cycle through the classes).
    pub batch: usize,
    /// Seed for both parameter init and the probe inputs.
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Gradients smaller than this (in both worlds) are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { batch: 2, seed: 7, step: 1e-3, tolerance: 1e-4, floor: 1e-3 }
    }
}

/// Compare the autodiff gradient of the full objective against central
/// finite differences for every trainable parameter. Runs in training mode
/// (so batch-norm statistics participate in the derivative); each evaluation
/// starts from a fresh copy of the initial batch-norm state so the loss is a
/// pure function of the parameters.
pub fn model_gradcheck(
    learner: &LearnerConfig,
    classifier: &ClassifierConfig,
    weights: &LossWeights,
    series_len: usize,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    let model = Model::<f64>::init(learner.clone(), classifier.clone(), series_len, settings.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(GRADCHECK_STREAM);
    let len = settings.batch * learner.regions * series_len;
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(&[settings.batch, learner.regions, series_len], data)?;
    let labels: Vec<usize> = (0..settings.batch).map(|i| i % classifier.classes).collect();

    let bn_init = model.bn.clone();
    let eval_loss = {
        let (lcfg, ccfg, w) = (learner.clone(), classifier.clone(), *weights);
        let (x, labels, bn_init) = (x.clone(), labels.clone(), bn_init.clone());
        move |bank: &ParamBank<f64>| -> Result<f64> {
            let mut tape = Tape::no_grad();
            let mut bn = bn_init.clone();
            let out = learner_forward(&lcfg, &mut tape, bank, &mut bn, &x, true)?;
            let clf = classifier_forward(&ccfg, &mut tape, bank, out.adjacency, out.features)?;
            let parts = total_loss(&mut tape, clf.probs, &labels, out.adjacency, out.features, &w)?;
            Ok(tape.value(parts.total).item())
        }
    };
    let fd = finite_diff_grads(&model.params, settings.step, &eval_loss)?;

    let mut tape = Tape::new();
    let mut bn = bn_init;
    let out = learner_forward(learner, &mut tape, &model.params, &mut bn, &x, true)?;
    let clf = classifier_forward(classifier, &mut tape, &model.params, out.adjacency, out.features)?;
    let parts = total_loss(&mut tape, clf.probs, &labels, out.adjacency, out.features, weights)?;
    let grads = tape.backward(parts.total)?;
    Ok(compare_grads(&grads, &fd, settings.tolerance, settings.floor))
}

// ---------------------------------------------------------------------------
