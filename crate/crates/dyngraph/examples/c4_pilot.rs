//! Throwaway pilot: one seed of the planted-recovery benchmark, timed.

use std::time::Instant;

use dyngraph::classifier::ClassifierConfig;
use dyngraph::evaluation::edge_recovery_auc;
use dyngraph::learner::LearnerConfig;
use dyngraph::objective::LossWeights;
use dyngraph::synth::{generate, generator_oracle_p, SyntheticSpec};
use dyngraph::tensor::Tensor;
use dyngraph::trainer::{crop_batch, train, TrainConfig, TrainOptions};
use dyngraph::Result;

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
    let t0 = Instant::now();
    let (dataset, planted, meta) = generate(&spec)?;
    println!("generate: {:.1}s", t0.elapsed().as_secs_f64());
    let p = generator_oracle_p(&dataset, &planted, &meta.regime_boundaries)?;
    println!("generator oracle p = {p:.3e}");

    let patience: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(15);
    let max_epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let crop: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let wd: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let attn: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(16);
    let lr: f64 = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let learner = LearnerConfig {
        regions: 16,
        window: 20,
        stride: 5,
        layers: 3,
        embed_dim: 32,
        attn_dim: attn,
        ..LearnerConfig::default()
    };
    let classifier = ClassifierConfig { layers: 2, hidden_dim: 32, ..ClassifierConfig::default() };
    let cfg = TrainConfig {
        seed,
        patience,
        max_epochs,
        crop_len: (crop > 0).then_some(crop),
        weight_decay: wd,
        learning_rate: lr,
        ..TrainConfig::default()
    };

    let t1 = Instant::now();
    let outcome = train(
        &dataset,
        &learner,
        &classifier,
        &LossWeights::default(),
        &cfg,
        &TrainOptions { progress: true, ..TrainOptions::default() },
    )?;
    let train_s = t1.elapsed().as_secs_f64();
    println!(
        "train: {train_s:.1}s, {} epochs ({:.2}s/epoch), best val {:.3} at {}",
        outcome.epochs_run,
        train_s / outcome.epochs_run as f64,
        outcome.best_val_acc,
        outcome.best_epoch
    );

    let v = dataset.regions();
    let full_len = dataset.series_len();
    let eval_len = if crop > 0 { crop } else { full_len };
    let test = &outcome.split.test;
    let n_test = test.len();

    // Single-crop accuracy (offset 0).
    let (x0, labels) = crop_batch(&dataset, test, eval_len)?;
    let (preds, _) = outcome.model.predict(&x0)?;
    let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let acc = hits as f64 / n_test as f64;

    // Crop-averaged accuracy: mean probabilities over stride-spaced offsets.
    let mut avg = vec![0.0f64; n_test * 2];
    let mut n_off = 0;
    let mut off = 0;
    while off + eval_len <= full_len {
        let mut data = Vec::with_capacity(n_test * v * eval_len);
        for &i in test {
            let sub = dataset.subject(i)?;
            for r in 0..v {
                for t in 0..eval_len {
                    data.push(sub.at(&[r, off + t]));
                }
            }
        }
        let xb = Tensor::from_vec(&[n_test, v, eval_len], data)?;
        let (_, probs) = outcome.model.predict(&xb)?;
        for (slot, p) in avg.iter_mut().zip(probs.data()) {
            *slot += *p as f64;
        }
        n_off += 1;
        off += 5;
    }
    let mut hits_avg = 0;
    for (k, l) in labels.iter().enumerate() {
        let pred = (avg[k * 2 + 1] > avg[k * 2]) as usize;
        hits_avg += (pred == *l) as usize;
    }
    let acc_avg = hits_avg as f64 / n_test as f64;

    // Edge recovery from crop-length graphs (offset 0) and full-length graphs.
    let t2 = Instant::now();
    let mut stacks_crop = Vec::new();
    let mut stacks_full = Vec::new();
    for &i in test {
        let sub = dataset.subject(i)?;
        let mut row = Vec::with_capacity(v * eval_len);
        for r in 0..v {
            for t in 0..eval_len {
                row.push(sub.at(&[r, t]));
            }
        }
        let cropped = Tensor::from_vec(&[v, eval_len], row)?;
        stacks_crop.push(outcome.model.dynamic_graph(&cropped)?.adjacency);
        stacks_full.push(outcome.model.dynamic_graph(&sub)?.adjacency);
    }
    let auc_crop = edge_recovery_auc(
        &stacks_crop,
        &labels,
        &planted,
        &meta.regime_boundaries,
        learner.window,
        learner.stride,
    )?;
    let auc_full = edge_recovery_auc(
        &stacks_full,
        &labels,
        &planted,
        &meta.regime_boundaries,
        learner.window,
        learner.stride,
    )?;
    println!("edge recovery: {:.1}s", t2.elapsed().as_secs_f64());
    println!(
        "seed {seed}: acc {acc:.3} ({hits}/{n_test}), acc_avg[{n_off}] {acc_avg:.3} ({hits_avg}/{n_test}), auc_crop {auc_crop:.3}, auc_full {auc_full:.3}, total {:.1}s",
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
