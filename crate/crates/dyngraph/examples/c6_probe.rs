//! Throwaway probe: does the soft threshold actually produce exact zeros
//! after training, and how far does the threshold parameter move?

use dyngraph::classifier::ClassifierConfig;
use dyngraph::learner::LearnerConfig;
use dyngraph::objective::LossWeights;
use dyngraph::synth::{generate, SyntheticSpec};
use dyngraph::trainer::{train, TrainConfig, TrainOptions};
use dyngraph::Result;

fn main() -> Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let spec = SyntheticSpec {
        subjects: 60,
        regions: 8,
        series_len: 80,
        regimes: 2,
        density: 0.25,
        coupling: 0.9,
        noise: 0.3,
        seed: 2,
        ..SyntheticSpec::default()
    };
    let (dataset, _, _) = generate(&spec)?;
    let learner = LearnerConfig {
        regions: 8,
        window: 20,
        stride: 5,
        layers: 2,
        embed_dim: 16,
        kernel_lens: vec![3, 5],
        attn_dim: 8,
        ..LearnerConfig::default()
    };
    let classifier = ClassifierConfig { layers: 2, hidden_dim: 16, ..ClassifierConfig::default() };
    let cfg = TrainConfig {
        batch_size: 12,
        learning_rate: lr as f32 as f64,
        max_epochs: epochs,
        patience: epochs,
        seed: 0,
        ..TrainConfig::default()
    };
    let tmp = std::env::temp_dir().join(format!("c6_probe_{epochs}_{lr}"));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let mut outcome = train(
        &dataset,
        &learner,
        &classifier,
        &LossWeights::default(),
        &cfg,
        &TrainOptions { out_dir: Some(tmp.clone()), progress: false, ..TrainOptions::default() },
    )?;

    let best_theta = outcome.model.params.get("learner.threshold").item();
    // The final epoch's state, not the best-validation snapshot.
    let last = dyngraph::trainer::load_checkpoint(&tmp.join("last.ckpt"))?;
    dyngraph::trainer::install_checkpoint(&mut outcome.model, &last)?;
    let theta = outcome.model.params.get("learner.threshold").item();
    let cutoff = 1.0 / (1.0 + (-theta as f64).exp());
    println!(
        "epochs {epochs}, lr {lr}: final theta = {theta:.4} (cutoff {cutoff:.3e}), best-snapshot theta = {best_theta:.4}"
    );

    let v = dataset.regions();
    let (mut zeros, mut total, mut min_w) = (0usize, 0usize, f32::MAX);
    for &i in &outcome.split.test {
        let g = outcome.model.dynamic_graph(&dataset.subject(i)?)?;
        let t_count = g.adjacency.shape()[2];
        for a in 0..v {
            for b in 0..v {
                if a == b {
                    continue;
                }
                for t in 0..t_count {
                    let w = g.adjacency.at(&[a, b, t]);
                    zeros += (w == 0.0) as usize;
                    min_w = min_w.min(w);
                    total += 1;
                }
            }
        }
    }
    println!(
        "test-set zero fraction {:.4} ({zeros}/{total}), smallest surviving weight {min_w:.3e}",
        zeros as f64 / total as f64
    );
    println!("final train acc {:.3}", outcome.history.last().unwrap().train_acc);
    Ok(())
}
