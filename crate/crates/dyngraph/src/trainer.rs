//! Training protocol: stratified splits, minority oversampling, random
//! temporal cropping, mini-batch AdamW, early stopping on validation
//! accuracy, and versioned checkpoints.
//!
//! Randomness is organized for exact reproducibility: parameter init uses
//! RNG stream 0 (inside [`Model::init`]), the split uses stream 1, and all
//! epoch-loop randomness (oversampling, shuffles, crop starts) uses stream 2
//! whose position is saved in every checkpoint, so a resumed run replays the
//! identical trace.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax_labels, ClassifierConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{window_count, LearnerConfig};
use crate::model::Model;
use crate::objective::LossWeights;
use crate::params::{BnStates, ParamBank};
use crate::tensor::optim::AdamW;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

/// RNG stream used for the train/val/test split.
const SPLIT_STREAM: u64 = 1;
/// RNG stream used for oversampling, epoch shuffles, and crop starts.
const TRAIN_STREAM: u64 = 2;

/// Magic bytes of checkpoint files.
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DDNC1";

/// Optimization settings. Defaults follow the reference protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation-accuracy improvement.
    pub patience: usize,
    /// Length of the temporal crop fed to the model; `None` uses the full
    /// series. Training crops start at a random offset, evaluation at 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop_len: Option<usize>,
    /// Train/val/test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    /// Zero out wall-clock times and force sequential kernels so repeated
    /// runs are byte-identical.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            max_epochs: 5000,
            patience: 15,
            crop_len: None,
            split: [0.8, 0.1, 0.1],
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train: batch_size must be positive"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("train: learning_rate must be finite and positive"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config("train: weight_decay must be finite and non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train: max_epochs must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("train: patience must be at least 1"));
        }
        if self.split.iter().any(|&r| r <= 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config("train: split ratios must be positive and sum to 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Splits, oversampling, crops
// ---------------------------------------------------------------------------

/// Disjoint, exhaustive index sets over a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split indices preserving class proportions: within every class the three
/// counts come from largest-remainder rounding of `ratios`, so each is
/// within one sample of the exact fraction. Every class needs ≥ 3 samples.
pub fn stratified_split(
    labels: &[usize],
    ratios: &[f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Split> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (label, mut members) in by_class {
        if members.len() < 3 {
            return Err(Error::config(format!(
                "split: class {label} has {} samples, need at least 3",
                members.len()
            )));
        }
        members.shuffle(rng);
        let n = members.len();
        let mut counts = [0usize; 3];
        let mut fracs = [0.0f64; 3];
        let mut allocated = 0;
        for (s, &ratio) in ratios.iter().enumerate() {
            let exact = ratio * n as f64;
            counts[s] = exact.floor() as usize;
            fracs[s] = exact - exact.floor();
            allocated += counts[s];
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).expect("finite").then(a.cmp(&b)));
        for &s in order.iter().take(n - allocated) {
            counts[s] += 1;
        }
        let (a, b) = (counts[0], counts[0] + counts[1]);
        split.train.extend_from_slice(&members[..a]);
        split.val.extend_from_slice(&members[a..b]);
        split.test.extend_from_slice(&members[b..]);
    }
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::config("split: dataset too small to populate val and test"));
    }
    Ok(split)
}

/// Duplicate minority-class indices uniformly at random (with replacement)
/// until every class matches the majority count. Train split only.
pub fn oversample_minority(
    indices: &[usize],
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut out = indices.to_vec();
    for members in by_class.values() {
        for _ in members.len()..target {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    out
}

/// Contiguous temporal crop of a (V, T') signal to (V, length). Training
/// mode draws a uniform start; evaluation mode always starts at 0.
pub fn temporal_crop(
    x: &Tensor<f32>,
    length: usize,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::shape("temporal_crop", format!("expected (V,T'), got {shape:?}")));
    }
    let (v, t_len) = (shape[0], shape[1]);
    if length == 0 || length > t_len {
        return Err(Error::invalid(
            "temporal_crop",
            format!("crop length {length} out of range 1..={t_len}"),
        ));
    }
    let start = if train_mode { rng.gen_range(0..=t_len - length) } else { 0 };
    let mut data = Vec::with_capacity(v * length);
    for row in 0..v {
        let base = row * t_len + start;
        data.extend_from_slice(&x.data()[base..base + length]);
    }
    Tensor::from_vec(&[v, length], data)
}

/// The train/val/test split a training run with this config will use
/// (seeded stream of its own, independent of the epoch loop).
pub fn training_split(labels: &[usize], cfg: &TrainConfig) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLIT_STREAM);
    stratified_split(labels, &cfg.split, &mut rng)
}

/// Assemble an evaluation batch (B, V, length): crops always start at 0.
pub fn crop_batch(
    dataset: &Dataset,
    indices: &[usize],
    length: usize,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    make_batch(dataset, indices, length, false, &mut rng)
}

/// Assemble a batch (B, V, length) of cropped subject signals.
fn make_batch(
    dataset: &Dataset,
    indices: &[usize],
    length: usize,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let v = dataset.regions();
    let mut data = Vec::with_capacity(indices.len() * v * length);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let cropped = temporal_crop(&dataset.subject(i)?, length, train_mode, rng)?;
        data.extend_from_slice(cropped.data());
        labels.push(dataset.labels[i]);
    }
    Ok((Tensor::from_vec(&[indices.len(), v, length], data)?, labels))
}

/// Accuracy of the model on the given subjects, evaluation-mode crops.
pub fn evaluate_accuracy(
    model: &Model<f32>,
    dataset: &Dataset,
    indices: &[usize],
    crop_len: usize,
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluate_accuracy", "no subjects to evaluate"));
    }
    let mut hits = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = crop_batch(dataset, chunk, crop_len)?;
        let (pred, _) = model.predict(&x)?;
        hits += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(hits as f64 / indices.len() as f64)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Complete training state at an epoch boundary.
#[derive(Clone)]
pub struct Checkpoint {
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    /// Epochs since the last validation improvement.
    pub stale: usize,
    pub seed: u64,
    /// Position of the stream-2 training RNG.
    pub rng_word_pos: u128,
    pub adam_step: u64,
    pub params: ParamBank<f32>,
    pub bn: BnStates<f32>,
    pub adam_moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
    /// Run configuration snapshot (opaque to the trainer).
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BnEntry {
    name: String,
    channels: usize,
    seen: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    epoch: usize,
    best_val_acc: f64,
    best_epoch: usize,
    stale: usize,
    seed: u64,
    rng_word_pos: u128,
    adam_step: u64,
    params: Vec<ParamEntry>,
    bn: Vec<BnEntry>,
    config: serde_json::Value,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for &x in values {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialize a checkpoint: magic, little-endian u64 header length, JSON
/// header, then the f32 payload (parameters, batch-norm statistics, Adam
/// moments) in header order. Identical state ⇒ identical bytes.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = CheckpointHeader {
        epoch: ckpt.epoch,
        best_val_acc: ckpt.best_val_acc,
        best_epoch: ckpt.best_epoch,
        stale: ckpt.stale,
        seed: ckpt.seed,
        rng_word_pos: ckpt.rng_word_pos,
        adam_step: ckpt.adam_step,
        params: ckpt
            .params
            .iter()
            .map(|(name, t)| ParamEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
        bn: ckpt
            .bn
            .iter()
            .map(|(name, stat)| BnEntry {
                name: name.clone(),
                channels: stat.mean.len(),
                seen: stat.seen,
            })
            .collect(),
        config: ckpt.config.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in ckpt.params.iter() {
        push_f32s(&mut bytes, t.data());
    }
    for (_, stat) in ckpt.bn.iter() {
        push_f32s(&mut bytes, stat.mean.data());
        push_f32s(&mut bytes, stat.var.data());
    }
    if ckpt.adam_step > 0 {
        for (name, _) in ckpt.params.iter() {
            let (m, v) = ckpt.adam_moments.get(name).ok_or_else(|| {
                Error::invalid("checkpoint", format!("missing optimizer moments for {name:?}"))
            })?;
            push_f32s(&mut bytes, m.data());
            push_f32s(&mut bytes, v.data());
        }
    }

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(format!("write {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("rename to {}", path.display()), e))
}

/// Read a checkpoint written by [`save_checkpoint`]; exact inverse.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let fail = |detail: String| Error::format(path.display().to_string(), detail);
    if bytes.len() < 13 {
        return Err(fail("file shorter than the fixed header".into()));
    }
    if &bytes[0..5] != CHECKPOINT_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..5])));
    }
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    if bytes.len() < 13 + header_len {
        return Err(fail("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[13..13 + header_len])
        .map_err(|e| fail(format!("bad header: {e}")))?;

    let mut cursor = 13 + header_len;
    let mut take = |count: usize| -> Result<Vec<f32>> {
        let bytes_needed = count * 4;
        if bytes.len() < cursor + bytes_needed {
            return Err(fail("truncated payload".into()));
        }
        let out = bytes[cursor..cursor + bytes_needed]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += bytes_needed;
        Ok(out)
    };

    let mut params = ParamBank::new();
    for entry in &header.params {
        let len: usize = entry.shape.iter().product();
        params.insert(&entry.name, Tensor::from_vec(&entry.shape, take(len)?)?);
    }
    let mut bn = BnStates::new();
    for entry in &header.bn {
        bn.insert(&entry.name, entry.channels);
        let stat = bn.get_mut(&entry.name);
        stat.mean = Tensor::from_vec(&[entry.channels], take(entry.channels)?)?;
        stat.var = Tensor::from_vec(&[entry.channels], take(entry.channels)?)?;
        stat.seen = entry.seen;
    }
    let mut adam_moments = BTreeMap::new();
    if header.adam_step > 0 {
        for entry in &header.params {
            let len: usize = entry.shape.iter().product();
            let m = Tensor::from_vec(&entry.shape, take(len)?)?;
            let v = Tensor::from_vec(&entry.shape, take(len)?)?;
            adam_moments.insert(entry.name.clone(), (m, v));
        }
    }
    if cursor != bytes.len() {
        return Err(fail(format!("{} unexpected trailing bytes", bytes.len() - cursor)));
    }
    Ok(Checkpoint {
        epoch: header.epoch,
        best_val_acc: header.best_val_acc,
        best_epoch: header.best_epoch,
        stale: header.stale,
        seed: header.seed,
        rng_word_pos: header.rng_word_pos,
        adam_step: header.adam_step,
        params,
        bn,
        adam_moments,
        config: header.config,
    })
}

/// Install checkpoint tensors into a freshly initialized model, refusing
/// name or shape mismatches.
pub fn install_checkpoint(model: &mut Model<f32>, ckpt: &Checkpoint) -> Result<()> {
    let model_names: Vec<String> = model.params.names().cloned().collect();
    let ckpt_names: Vec<String> = ckpt.params.names().cloned().collect();
    if model_names != ckpt_names {
        return Err(Error::invalid(
            "checkpoint",
            "parameter names do not match the configured model",
        ));
    }
    for (name, tensor) in ckpt.params.iter() {
        model.params.set(name, tensor.clone())?;
    }
    let model_bn: Vec<String> = model.bn.iter().map(|(n, _)| n.clone()).collect();
    let ckpt_bn: Vec<String> = ckpt.bn.iter().map(|(n, _)| n.clone()).collect();
    if model_bn != ckpt_bn {
        return Err(Error::invalid(
            "checkpoint",
            "batch-norm sites do not match the configured model",
        ));
    }
    for (name, stat) in ckpt.bn.iter() {
        let dst = model.bn.get_mut(name);
        if dst.mean.len() != stat.mean.len() {
            return Err(Error::shape(
                "checkpoint",
                format!("batch-norm site {name:?} has {} channels", stat.mean.len()),
            ));
        }
        *dst = stat.clone();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

/// Where to write run outputs and whether to continue an earlier run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for best.ckpt, last.ckpt, and metrics.csv. `None` keeps the
    /// run entirely in memory.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to resume from (typically a previous run's last.ckpt).
    pub resume: Option<PathBuf>,
    /// Opaque configuration snapshot embedded in every checkpoint.
    pub config_snapshot: serde_json::Value,
    /// Print one line per epoch to stderr.
    pub progress: bool,
}

/// One row of metrics.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub wall_ms: u64,
}

/// Result of a training run.
pub struct TrainOutcome {
    /// Model with the best parameters observed during this run (when
    /// resuming without further improvement, the resumed parameters).
    pub model: Model<f32>,
    pub split: Split,
    /// Epochs executed by this call (a resumed run records only new epochs).
    pub history: Vec<EpochRecord>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    /// Total completed epochs, including any before a resume.
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Train a model on the dataset. See the module docs for the RNG layout;
/// the run is deterministic given (dataset bytes, configs, seed).
pub fn train(
    dataset: &Dataset,
    learner: &LearnerConfig,
    classifier: &ClassifierConfig,
    weights: &LossWeights,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    dataset.validate()?;
    cfg.validate()?;
    weights.validate()?;
    let crop_len = cfg.crop_len.unwrap_or_else(|| dataset.series_len());
    if crop_len > dataset.series_len() {
        return Err(Error::config(format!(
            "train: crop length {crop_len} exceeds the series length {}",
            dataset.series_len()
        )));
    }
    window_count(crop_len, learner.window, learner.stride)?;
    if dataset.num_classes() > classifier.classes {
        return Err(Error::config(format!(
            "train: dataset has {} classes but the classifier is sized for {}",
            dataset.num_classes(),
            classifier.classes
        )));
    }

    let split = training_split(&dataset.labels, cfg)?;

    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(TRAIN_STREAM);
    let oversampled = oversample_minority(&split.train, &dataset.labels, &mut train_rng);

    let mut model = Model::<f32>::init(learner.clone(), classifier.clone(), crop_len, cfg.seed)?;
    let mut adam = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut start_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut best_state: Option<(ParamBank<f32>, BnStates<f32>)> = None;

    if let Some(resume_path) = &opts.resume {
        let ckpt = load_checkpoint(resume_path)?;
        if ckpt.seed != cfg.seed {
            return Err(Error::config(format!(
                "resume: checkpoint was trained with seed {}, run uses {}",
                ckpt.seed, cfg.seed
            )));
        }
        install_checkpoint(&mut model, &ckpt)?;
        adam.restore(ckpt.adam_step, ckpt.adam_moments.clone());
        train_rng.set_word_pos(ckpt.rng_word_pos);
        start_epoch = ckpt.epoch;
        best_val = ckpt.best_val_acc;
        best_epoch = ckpt.best_epoch;
        stale = ckpt.stale;
        best_state = Some((model.params.clone(), model.bn.clone()));
    }

    let mut metrics_file = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
            let path = dir.join("metrics.csv");
            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(start_epoch > 0)
                .truncate(start_epoch == 0)
                .write(true)
                .open(&path)
                .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
            if start_epoch == 0 {
                file.write_all(b"epoch,train_loss,train_acc,val_acc,wall_ms\n")
                    .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
            }
            Some((file, path))
        }
        None => None,
    };

    let save = |name: &str, model: &Model<f32>, adam: &AdamW<f32>, epoch, best_val, best_epoch, stale, pos| -> Result<()> {
        let Some(dir) = &opts.out_dir else { return Ok(()) };
        let ckpt = Checkpoint {
            epoch,
            best_val_acc: best_val,
            best_epoch,
            stale,
            seed: cfg.seed,
            rng_word_pos: pos,
            adam_step: adam.step_count(),
            params: model.params.clone(),
            bn: model.bn.clone(),
            adam_moments: adam
                .moments()
                .map(|(k, m, v)| (k.clone(), (m.clone(), v.clone())))
                .collect(),
            config: opts.config_snapshot.clone(),
        };
        save_checkpoint(&dir.join(name), &ckpt)
    };

    let mut history = Vec::new();
    let mut epochs_run = start_epoch;
    let mut stopped_early = false;

    for epoch in start_epoch + 1..=cfg.max_epochs {
        let timer = Instant::now();
        let mut order = oversampled.clone();
        order.shuffle(&mut train_rng);

        let mut loss_sum = 0.0f64;
        let mut hits = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut step = || -> Result<(f64, usize)> {
                let (x, labels) = make_batch(dataset, chunk, crop_len, true, &mut train_rng)?;
                let mut tape = Tape::<f32>::new();
                let (out, parts) = model.batch_loss(&mut tape, &x, &labels, weights, true)?;
                let loss = tape.value(parts.total).item() as f64;
                if !loss.is_finite() {
                    return Err(Error::numeric("train", "loss is not finite".to_string()));
                }
                let pred = argmax_labels(tape.value(out.probs));
                let hits = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
                let grads = tape.backward(parts.total)?;
                adam.step(&mut model.params, &grads)?;
                Ok((loss * chunk.len() as f64, hits))
            };
            let (batch_loss, batch_hits) = step().map_err(|e| {
                Error::numeric("train", format!("epoch {epoch}, batch {batch_idx}: {e}"))
            })?;
            loss_sum += batch_loss;
            hits += batch_hits;
        }
        let train_loss = loss_sum / order.len() as f64;
        let train_acc = hits as f64 / order.len() as f64;
        let val_acc = evaluate_accuracy(&model, dataset, &split.val, crop_len, cfg.batch_size)?;
        let wall_ms = if cfg.deterministic { 0 } else { timer.elapsed().as_millis() as u64 };

        let improved = val_acc > best_val;
        if improved {
            best_val = val_acc;
            best_epoch = epoch;
            stale = 0;
            best_state = Some((model.params.clone(), model.bn.clone()));
            save("best.ckpt", &model, &adam, epoch, best_val, best_epoch, stale, train_rng.get_word_pos())?;
        } else {
            stale += 1;
        }

        let record = EpochRecord { epoch, train_loss, train_acc, val_acc, wall_ms };
        if let Some((file, path)) = &mut metrics_file {
            file.write_all(
                format!("{epoch},{train_loss},{train_acc},{val_acc},{wall_ms}\n").as_bytes(),
            )
            .and_then(|()| file.flush())
            .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
        }
        if opts.progress {
            eprintln!(
                "epoch {epoch}: loss {train_loss:.6} train {train_acc:.3} val {val_acc:.3}{}",
                if improved { "  (best)" } else { "" }
            );
        }
        save("last.ckpt", &model, &adam, epoch, best_val, best_epoch, stale, train_rng.get_word_pos())?;
        history.push(record);
        epochs_run = epoch;

        if stale >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    if let Some((params, bn)) = best_state {
        model.params = params;
        model.bn = bn;
    }
    Ok(TrainOutcome {
        model,
        split,
        history,
        best_val_acc: best_val,
        best_epoch,
        epochs_run,
        stopped_early,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SyntheticSpec};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn expect_err(result: Result<TrainOutcome>) -> Error {
        match result {
            Err(e) => e,
            Ok(_) => panic!("expected training to fail"),
        }
    }

    // -- stratified split -----------------------------------------------------

    #[test]
    fn split_100_balanced_is_exact() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let split = stratified_split(&labels, &[0.8, 0.1, 0.1], &mut rng(0)).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (80, 10, 10));
        for part in [&split.train, &split.val, &split.test] {
            let ones = part.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones * 2, part.len(), "class balance preserved");
        }
    }

    #[test]
    fn split_matches_counting_oracle_on_random_labels() {
        for seed in 0..50 {
            let mut r = rng(seed);
            let classes = r.gen_range(2..4);
            let n = r.gen_range(20..80);
            let labels: Vec<usize> = (0..n)
                .map(|i| if i < 3 * classes { i % classes } else { r.gen_range(0..classes) })
                .collect();
            let ratios = [0.8, 0.1, 0.1];
            let split = stratified_split(&labels, &ratios, &mut rng(seed + 500)).unwrap();

            // Disjoint and exhaustive.
            let mut all: Vec<usize> =
                split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>(), "seed {seed}");

            // Per-class deviation from the exact fraction is < 1 sample.
            for class in 0..classes {
                let n_c = labels.iter().filter(|&&l| l == class).count();
                for (part, ratio) in
                    [(&split.train, 0.8), (&split.val, 0.1), (&split.test, 0.1)]
                {
                    let got = part.iter().filter(|&&i| labels[i] == class).count();
                    let exact = ratio * n_c as f64;
                    assert!(
                        (got as f64 - exact).abs() < 1.0,
                        "seed {seed} class {class}: {got} vs exact {exact}"
                    );
                }
            }

            // Same seed reproduces the split.
            let again = stratified_split(&labels, &ratios, &mut rng(seed + 500)).unwrap();
            assert_eq!(split, again);
        }
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let labels = vec![0, 0, 0, 1, 1];
        assert!(stratified_split(&labels, &[0.8, 0.1, 0.1], &mut rng(0)).is_err());
    }

    // -- oversampling -----------------------------------------------------------

    #[test]
    fn oversampling_equalizes_class_counts() {
        // 6 : 4 imbalance over indices 0..10.
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let indices: Vec<usize> = (0..10).collect();
        let out = oversample_minority(&indices, &labels, &mut rng(3));
        assert_eq!(out.len(), 12);
        let ones: Vec<usize> = out.iter().copied().filter(|&i| labels[i] == 1).collect();
        assert_eq!(ones.len(), 6);
        assert!(out[..10] == indices[..], "originals kept in order");
        assert!(out[10..].iter().all(|&i| labels[i] == 1), "duplicates are minority members");

        let balanced = vec![0, 1, 0, 1];
        let idx = vec![0, 1, 2, 3];
        assert_eq!(oversample_minority(&idx, &balanced, &mut rng(4)), idx);
    }

    // -- temporal crop ------------------------------------------------------------

    #[test]
    fn crop_identity_and_eval_determinism() {
        let x = Tensor::from_vec(&[2, 5], (0..10).map(|i| i as f32).collect()).unwrap();
        let full = temporal_crop(&x, 5, false, &mut rng(0)).unwrap();
        assert_eq!(full.data(), x.data());
        let a = temporal_crop(&x, 3, false, &mut rng(1)).unwrap();
        let b = temporal_crop(&x, 3, false, &mut rng(2)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data(), &[0.0, 1.0, 2.0, 5.0, 6.0, 7.0]);
        assert!(temporal_crop(&x, 6, false, &mut rng(0)).is_err());
        assert!(temporal_crop(&x, 0, false, &mut rng(0)).is_err());
    }

    #[test]
    fn crop_starts_are_uniform() {
        // T' = 10, length 4 → starts 0..=6. χ² against uniform over 10k draws;
        // the 0.999 quantile at 6 degrees of freedom is 22.46.
        let x = Tensor::from_vec(&[1, 10], (0..10).map(|i| i as f32).collect()).unwrap();
        let mut r = rng(11);
        let mut counts = [0usize; 7];
        for _ in 0..10_000 {
            let c = temporal_crop(&x, 4, true, &mut r).unwrap();
            counts[c.at(&[0, 0]) as usize] += 1;
        }
        let expected = 10_000.0 / 7.0;
        let chi2: f64 =
            counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 22.46, "start distribution is not uniform: χ² = {chi2}, {counts:?}");
    }

    // -- checkpoints ---------------------------------------------------------------

    fn sample_checkpoint() -> Checkpoint {
        let mut params = ParamBank::new();
        params.insert("a.w", Tensor::from_vec(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap());
        params.insert("b.w", Tensor::from_vec(&[3], vec![-1.0f32, 0.5, 0.25]).unwrap());
        let mut bn = BnStates::new();
        bn.insert("a.bn", 2);
        let stat = bn.get_mut("a.bn");
        stat.mean = Tensor::from_vec(&[2], vec![0.1f32, -0.2]).unwrap();
        stat.var = Tensor::from_vec(&[2], vec![0.9f32, 1.1]).unwrap();
        stat.seen = true;
        let adam_moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)> = [
            ("a.w".to_string(), (Tensor::full(&[2, 2], 0.01f32), Tensor::full(&[2, 2], 0.1f32))),
            ("b.w".to_string(), (Tensor::full(&[3], 0.02f32), Tensor::full(&[3], 0.2f32))),
        ]
        .into_iter()
        .collect();
        Checkpoint {
            epoch: 17,
            best_val_acc: 0.875,
            best_epoch: 12,
            stale: 5,
            seed: 99,
            rng_word_pos: 123456789,
            adam_step: 34,
            params,
            bn,
            adam_moments,
            config: serde_json::json!({"note": "test"}),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 17);
        assert_eq!(loaded.best_val_acc, 0.875);
        assert_eq!(loaded.rng_word_pos, 123456789);
        assert_eq!(loaded.params.get("a.w").data(), ckpt.params.get("a.w").data());
        assert_eq!(loaded.bn.get("a.bn").var.data(), ckpt.bn.get("a.bn").var.data());
        assert!(loaded.bn.get("a.bn").seen);
        let path2 = dir.path().join("y.ckpt");
        save_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(first, fs::read(&path2).unwrap(), "save→load→save must be stable");
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'Z';
        fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).err().unwrap().to_string().contains("magic"));

        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).err().unwrap().to_string().contains("payload"));
    }

    // -- training -------------------------------------------------------------------

    fn noise_dataset(subjects: usize, seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            subjects,
            regions: 4,
            series_len: 16,
            regimes: 1,
            density: 0.0,
            seed,
            ..SyntheticSpec::default()
        };
        generate(&spec).unwrap().0
    }

    fn tiny_model_configs() -> (LearnerConfig, ClassifierConfig) {
        (
            LearnerConfig {
                regions: 4,
                window: 5,
                stride: 2,
                layers: 1,
                embed_dim: 4,
                kernel_lens: vec![2, 3],
                attn_dim: 3,
                ..LearnerConfig::default()
            },
            ClassifierConfig { layers: 1, hidden_dim: 3, classes: 2, ..ClassifierConfig::default() },
        )
    }

    #[test]
    fn plateau_exhausts_patience() {
        let dataset = noise_dataset(20, 5);
        let (learner, classifier) = tiny_model_configs();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 40,
            patience: 3,
            seed: 1,
            deterministic: true,
            ..TrainConfig::default()
        };
        let out = train(
            &dataset,
            &learner,
            &classifier,
            &LossWeights::default(),
            &cfg,
            &TrainOptions::default(),
        )
        .unwrap();
        assert!(out.stopped_early, "plateau must trigger early stopping");
        assert_eq!(out.epochs_run, out.best_epoch + cfg.patience);
        // Validation never exceeds the recorded best.
        let max_val = out.history.iter().map(|r| r.val_acc).fold(f64::MIN, f64::max);
        assert_eq!(max_val, out.best_val_acc);
        assert!(out.history.iter().all(|r| r.wall_ms == 0), "deterministic runs blank timings");
    }

    #[test]
    fn same_seed_same_trace_and_files() {
        let dataset = noise_dataset(20, 6);
        let (learner, classifier) = tiny_model_configs();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 4,
            patience: 50,
            seed: 2,
            deterministic: true,
            ..TrainConfig::default()
        };
        let weights = LossWeights::default();
        let run = |dir: &Path| {
            let opts = TrainOptions { out_dir: Some(dir.to_path_buf()), ..Default::default() };
            train(&dataset, &learner, &classifier, &weights, &cfg, &opts).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (a, b) = (run(d1.path()), run(d2.path()));
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits(), "epoch {}", ra.epoch);
            assert_eq!(ra.val_acc.to_bits(), rb.val_acc.to_bits());
        }
        for name in ["metrics.csv", "best.ckpt", "last.ckpt"] {
            let fa = fs::read(d1.path().join(name)).unwrap();
            let fb = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between identical runs");
        }
    }

    #[test]
    fn resume_continues_the_identical_trace() {
        let dataset = noise_dataset(20, 7);
        let (learner, classifier) = tiny_model_configs();
        let weights = LossWeights::default();
        let base = TrainConfig {
            batch_size: 8,
            patience: 50,
            seed: 3,
            deterministic: true,
            ..TrainConfig::default()
        };

        // Uninterrupted 6-epoch run.
        let d_full = tempfile::tempdir().unwrap();
        let full = train(
            &dataset,
            &learner,
            &classifier,
            &weights,
            &TrainConfig { max_epochs: 6, ..base.clone() },
            &TrainOptions { out_dir: Some(d_full.path().to_path_buf()), ..Default::default() },
        )
        .unwrap();

        // Same run interrupted after 3 epochs, then resumed.
        let d_part = tempfile::tempdir().unwrap();
        train(
            &dataset,
            &learner,
            &classifier,
            &weights,
            &TrainConfig { max_epochs: 3, ..base.clone() },
            &TrainOptions { out_dir: Some(d_part.path().to_path_buf()), ..Default::default() },
        )
        .unwrap();
        let resumed = train(
            &dataset,
            &learner,
            &classifier,
            &weights,
            &TrainConfig { max_epochs: 6, ..base },
            &TrainOptions {
                out_dir: Some(d_part.path().to_path_buf()),
                resume: Some(d_part.path().join("last.ckpt")),
                ..Default::default()
            },
        )
        .unwrap();

        assert_eq!(resumed.history.len(), 3, "resume runs only the remaining epochs");
        for (ra, rb) in full.history[3..].iter().zip(&resumed.history) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits(), "epoch {}", ra.epoch);
            assert_eq!(ra.val_acc.to_bits(), rb.val_acc.to_bits());
        }
        let fa = fs::read(d_full.path().join("last.ckpt")).unwrap();
        let fb = fs::read(d_part.path().join("last.ckpt")).unwrap();
        assert_eq!(fa, fb, "final checkpoints of split and straight runs must match");
        // metrics.csv rows accumulate across the interruption.
        let text = fs::read_to_string(d_part.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 7, "header + 6 epochs");
        let full_text = fs::read_to_string(d_full.path().join("metrics.csv")).unwrap();
        assert_eq!(text, full_text);
    }

    #[test]
    fn resume_rejects_mismatched_model() {
        let dataset = noise_dataset(20, 8);
        let (learner, classifier) = tiny_model_configs();
        let weights = LossWeights::default();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            patience: 50,
            seed: 4,
            deterministic: true,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        train(
            &dataset,
            &learner,
            &classifier,
            &weights,
            &cfg,
            &TrainOptions { out_dir: Some(dir.path().to_path_buf()), ..Default::default() },
        )
        .unwrap();

        // Same names, different region count → shape mismatch.
        let spec5 = SyntheticSpec {
            subjects: 20,
            regions: 5,
            series_len: 16,
            regimes: 1,
            density: 0.0,
            seed: 8,
            ..SyntheticSpec::default()
        };
        let dataset5 = generate(&spec5).unwrap().0;
        let learner5 = LearnerConfig { regions: 5, ..learner.clone() };
        let err = expect_err(train(
            &dataset5,
            &learner5,
            &classifier,
            &weights,
            &cfg,
            &TrainOptions {
                resume: Some(dir.path().join("last.ckpt")),
                ..Default::default()
            },
        ));
        assert!(
            matches!(err, Error::Shape { .. }),
            "wanted a shape error, got: {err}"
        );

        // Different layer count → different parameter names.
        let learner2 = LearnerConfig { layers: 2, ..learner };
        let err = expect_err(train(
            &dataset,
            &learner2,
            &classifier,
            &weights,
            &cfg,
            &TrainOptions {
                resume: Some(dir.path().join("last.ckpt")),
                ..Default::default()
            },
        ));
        assert!(err.to_string().contains("parameter names"), "got: {err}");
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let bad = [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { weight_decay: -1.0, ..TrainConfig::default() },
            TrainConfig { max_epochs: 0, ..TrainConfig::default() },
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { split: [0.5, 0.5, 0.5], ..TrainConfig::default() },
            TrainConfig { split: [1.0, 0.0, 0.0], ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
