//! Run the graph learner on one signal and inspect the result: a sequence of
//! soft-thresholded adjacency snapshots next to their windowed-correlation
//! node features.

use dyngraph::classifier::ClassifierConfig;
use dyngraph::learner::LearnerConfig;
use dyngraph::model::Model;
use dyngraph::objective::LossWeights;
use dyngraph::synth::{generate, SyntheticSpec};
use dyngraph::tensor::tape::Tape;
use dyngraph::Result;

fn main() -> Result<()> {
    let spec = SyntheticSpec {
        subjects: 4,
        regions: 6,
        series_len: 80,
        regimes: 2,
        density: 0.25,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let (dataset, _, _) = generate(&spec)?;

    let learner = LearnerConfig {
        regions: 6,
        window: 20,
        stride: 5,
        layers: 2,
        embed_dim: 8,
        kernel_lens: vec![3, 5],
        attn_dim: 6,
        ..LearnerConfig::default()
    };
    let classifier = ClassifierConfig { hidden_dim: 8, ..ClassifierConfig::default() };
    let mut model = Model::<f32>::init(learner, classifier, dataset.series_len(), 0)?;

    // Evaluation mode uses batch-norm running statistics, so warm them up
    // with one training-mode forward pass (training would do this anyway).
    let mut tape = Tape::new();
    let warmup = dataset.batch(&[0, 1, 2, 3])?;
    model.batch_loss(&mut tape, &warmup, &dataset.labels[..4], &LossWeights::default(), true)?;

    // dynamic_graph runs the learner alone, in evaluation mode, off the tape.
    let x = dataset.subject(0)?;
    let graph = model.dynamic_graph(&x)?;
    let shape = graph.adjacency.shape().to_vec();
    let (v, t) = (shape[0], shape[2]);
    println!("adjacency stack: {v} x {v} nodes over {t} snapshots");

    // Each snapshot is symmetric (undirected), entries live in [0, 1], and
    // the diagonal keeps a self-loop weight for the graph convolutions.
    for k in 0..t {
        let (mut lo, mut hi, mut sum, mut zeros, mut diag) = (f32::MAX, f32::MIN, 0.0f64, 0usize, 0.0f64);
        for i in 0..v {
            diag += graph.adjacency.at(&[i, i, k]) as f64;
            for j in 0..v {
                let a = graph.adjacency.at(&[i, j, k]);
                let sym = graph.adjacency.at(&[j, i, k]);
                assert!((a - sym).abs() < 1e-6, "undirected snapshots are symmetric");
                assert!((0.0..=1.0).contains(&a), "weights stay in the unit interval");
                if i == j {
                    continue;
                }
                lo = lo.min(a);
                hi = hi.max(a);
                sum += a as f64;
                zeros += (a == 0.0) as usize;
            }
        }
        println!(
            "snapshot {k:2}: edges in [{lo:.4}, {hi:.4}], mean {:.4}, self-loops {:.4}, {zeros} of {} exactly zero",
            sum / (v * (v - 1)) as f64,
            diag / v as f64,
            v * (v - 1)
        );
    }

    // The node features are the raw windowed Pearson correlations in [-1, 1]
    // (diagonal 1); the learner decides which correlations survive as edges.
    let f0 = graph.features.at(&[0, 1, 0]);
    let d0 = graph.features.at(&[0, 0, 0]);
    println!("feature[0,1] at snapshot 0 = {f0:.4} (windowed correlation), feature[0,0] = {d0:.1}");
    Ok(())
}
