//! End-to-end gradient verification: the whole pipeline — windowing,
//! correlation features, temporal convolutions, attention, soft threshold,
//! graph convolutions, pooling, classifier, and all four loss terms — run in
//! f64 and compared against central finite differences parameter by
//! parameter.

use dyngraph::classifier::ClassifierConfig;
use dyngraph::learner::LearnerConfig;
use dyngraph::model::{model_gradcheck, GradCheckSettings};
use dyngraph::objective::LossWeights;
use dyngraph::Result;

fn main() -> Result<()> {
    // Small enough to finish in seconds, big enough that every code path
    // (multiple branches, multiple layers, attention) is exercised.
    let learner = LearnerConfig {
        regions: 4,
        window: 6,
        stride: 3,
        layers: 2,
        embed_dim: 6,
        kernel_lens: vec![2, 3],
        attn_dim: 4,
        ..LearnerConfig::default()
    };
    let classifier =
        ClassifierConfig { layers: 2, hidden_dim: 3, classes: 2, ..ClassifierConfig::default() };

    let settings = GradCheckSettings::default(); // batch 2, h = 1e-3, tol 1e-4
    let report = model_gradcheck(&learner, &classifier, &LossWeights::default(), 24, &settings)?;

    let mut rows = report.rows.clone();
    rows.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).unwrap());
    println!("{:<30} {:>8} {:>13}", "parameter", "elements", "max rel err");
    for row in &rows {
        println!("{:<30} {:>8} {:>13.3e}", row.name, row.elements, row.max_rel_err);
    }
    println!(
        "worst {:.3e} over {} parameters (tolerance {:.0e}): {}",
        report.worst,
        rows.len(),
        report.tolerance,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    assert!(report.passed());
    Ok(())
}
