//! Scoring and significance: accuracy, AUROC, and the almost-stochastic-order
//! test that decides whether one run population actually beats another.

use dyngraph::evaluation::{accuracy, aso_epsilon_min, auroc, bonferroni, AsoSettings};
use dyngraph::Result;

fn main() -> Result<()> {
    // Accuracy and AUROC on a toy binary problem. AUROC uses average ranks,
    // so ties contribute half a pair each.
    let labels = vec![1, 1, 1, 0, 0, 1, 0, 0, 1, 0];
    let preds = vec![1, 1, 0, 0, 0, 1, 1, 0, 1, 0];
    let scores = vec![0.9, 0.8, 0.45, 0.3, 0.2, 0.7, 0.55, 0.1, 0.85, 0.45];
    println!("accuracy = {:.3}", accuracy(&preds, &labels)?);
    println!("auroc    = {:.3}", auroc(&scores, &labels)?);

    // Five seeds per configuration is the realistic regime for this test.
    let full = vec![0.91, 0.88, 0.93, 0.90, 0.89];
    let ablated = vec![0.84, 0.86, 0.83, 0.85, 0.82];
    let noisy = vec![0.90, 0.83, 0.92, 0.84, 0.88];

    // epsilon_min near 0: the first population almost-stochastically
    // dominates; near 0.5: no order; near 1: dominated.
    let settings = AsoSettings::default();
    let pairs: [(&str, &[f64], &str, &[f64]); 3] = [
        ("full", &full, "ablated", &ablated),
        ("full", &full, "noisy", &noisy),
        ("noisy", &noisy, "ablated", &ablated),
    ];
    let alpha = bonferroni(0.05, pairs.len())?;
    println!("Bonferroni-adjusted alpha over {} comparisons: {alpha:.4}", pairs.len());
    for (na, a, nb, b) in pairs {
        let forward = aso_epsilon_min(a, b, &settings)?;
        let backward = aso_epsilon_min(b, a, &settings)?;
        println!("{na:>5} vs {nb}: epsilon_min {forward:.3} (reverse {backward:.3})");
    }

    // Identical populations sit at exactly 0.5 by construction: no order is
    // determinable, and the bootstrap would only add noise around that fact.
    let same = aso_epsilon_min(&full, &full.clone(), &settings)?;
    println!("full vs itself: epsilon_min {same:.3}");
    assert_eq!(same, 0.5);
    Ok(())
}
