//! Metrics (accuracy, AUROC), the almost-stochastic-order significance test
//! with Bonferroni correction, interpretability artifacts (temporally
//! weighted region importance, windowed-Pearson baselines), and planted-edge
//! recovery scoring for synthetic runs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::PlantedGraphs;
use crate::error::{Error, Result};
use crate::learner::{map_unit_interval, node_features, split_windows};
use crate::tensor::Tensor;

/// Magic bytes of exported adjacency stacks.
pub const ADJACENCY_MAGIC: &[u8; 5] = b"DDNA1";

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

/// Fraction of exact label matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::invalid(
            "accuracy",
            format!("need equal non-empty inputs, got {} and {}", preds.len(), labels.len()),
        ));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Area under the ROC curve of positive-class scores against 0/1 labels:
/// the Mann–Whitney statistic P(score⁺ > score⁻) + ½·P(tie), computed via
/// average ranks so ties get exactly half credit.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(
            "auroc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("auroc", "scores must be finite"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid("auroc", format!("labels must be 0/1, got {bad}")));
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auroc", "both classes must be present"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of 1-based ranks i+1..=j+1
        for &k in &order[i..=j] {
            rank[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&k| labels[k] == 1).map(|k| rank[k]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Almost stochastic order
// ---------------------------------------------------------------------------

/// Knobs of the ASO test. `quantiles` is the grid resolution of the
/// quantile-difference integrals.
#[derive(Debug, Clone)]
pub struct AsoSettings {
    pub alpha: f64,
    pub bootstrap: usize,
    pub quantiles: usize,
    pub seed: u64,
}

impl Default for AsoSettings {
    fn default() -> Self {
        AsoSettings { alpha: 0.05, bootstrap: 1000, quantiles: 100, seed: 0 }
    }
}

/// Empirical quantile: smallest order statistic whose CDF reaches `p`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).max(1) - 1;
    sorted[k.min(n - 1)]
}

/// Share of the squared quantile gap where B sits above A; 0 when A
/// dominates everywhere, 1 when B does, 0.5 when the gap vanishes.
fn violation_ratio(a_sorted: &[f64], b_sorted: &[f64], grid: usize) -> f64 {
    let mut total = 0.0;
    let mut violation = 0.0;
    for i in 0..grid {
        let p = (i as f64 + 0.5) / grid as f64;
        let d = quantile(b_sorted, p) - quantile(a_sorted, p);
        total += d * d;
        if d > 0.0 {
            violation += d * d;
        }
    }
    if total == 0.0 {
        0.5
    } else {
        violation / total
    }
}

/// The almost-stochastic-order statistic ε_min comparing score sets of two
/// models. 0 means A is stochastically dominant over B, values below 0.5
/// mean A almost stochastically dominates, 0.5 means no order, and values
/// near 1 mean B dominates A.
///
/// The point estimate is the squared-quantile violation ratio; a bootstrap
/// (resampling both sets with replacement) estimates its spread, and the
/// returned value is the lower one-sided confidence bound at level `alpha`,
/// clamped to [0,1]. Identical score multisets short-circuit to exactly 0.5:
/// no order is determinable a priori, and the bootstrap adjustment would
/// only push the value spuriously toward dominance.
pub fn aso_epsilon_min(a: &[f64], b: &[f64], settings: &AsoSettings) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("aso", "both score sets must be non-empty"));
    }
    if a.iter().chain(b).any(|s| !s.is_finite()) {
        return Err(Error::invalid("aso", "scores must be finite"));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::invalid("aso", "alpha must lie in (0,1)"));
    }
    if settings.bootstrap == 0 || settings.quantiles == 0 {
        return Err(Error::invalid("aso", "bootstrap and quantile counts must be positive"));
    }
    let sort = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(|x, y| x.partial_cmp(y).expect("finite scores"));
        v
    };
    let a_sorted = sort(a);
    let b_sorted = sort(b);
    if a_sorted == b_sorted {
        return Ok(0.5);
    }

    let eps_hat = violation_ratio(&a_sorted, &b_sorted, settings.quantiles);

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (n, m) = (a.len(), b.len());
    let mut resampled = Vec::with_capacity(settings.bootstrap);
    let mut a_star = vec![0.0; n];
    let mut b_star = vec![0.0; m];
    for _ in 0..settings.bootstrap {
        for slot in a_star.iter_mut() {
            *slot = a_sorted[rng.gen_range(0..n)];
        }
        for slot in b_star.iter_mut() {
            *slot = b_sorted[rng.gen_range(0..m)];
        }
        a_star.sort_by(|x, y| x.partial_cmp(y).expect("finite scores"));
        b_star.sort_by(|x, y| x.partial_cmp(y).expect("finite scores"));
        resampled.push(violation_ratio(&a_star, &b_star, settings.quantiles));
    }

    let scale = ((n * m) as f64 / (n + m) as f64).sqrt();
    let centered: Vec<f64> = resampled.iter().map(|&e| scale * (e - eps_hat)).collect();
    let mean = centered.iter().sum::<f64>() / centered.len() as f64;
    let var = centered.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / centered.len() as f64;
    let sigma = var.sqrt();

    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - settings.alpha);
    Ok((eps_hat - sigma / scale * z).clamp(0.0, 1.0))
}

/// Bonferroni-adjusted significance level for `comparisons` tests.
pub fn bonferroni(alpha: f64, comparisons: usize) -> Result<f64> {
    if comparisons == 0 {
        return Err(Error::invalid("bonferroni", "need at least one comparison"));
    }
    Ok(alpha / comparisons as f64)
}

// ---------------------------------------------------------------------------
// Interpretability
// ---------------------------------------------------------------------------

/// Temporally weighted node degrees with their normalization and top set.
#[derive(Debug, Clone)]
pub struct ImportanceReport {
    /// z_i = (1/T)·Σ_t α_t·Σ_j A[j,i,t], before normalization.
    pub raw: Vec<f64>,
    /// Min-max normalized to [0,1]; an all-equal raw vector maps to zeros.
    pub normalized: Vec<f64>,
    /// Indices of the top ⌈0.2·V⌉ regions, ties broken by lower index.
    pub top: Vec<usize>,
    /// The attention weights that produced the scores.
    pub alpha: Vec<f64>,
}

impl ImportanceReport {
    /// Normalize raw scores and pick the top ⌈0.2·V⌉ set. Used directly when
    /// aggregating raw scores over many subjects.
    pub fn from_raw(raw: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("region_importance", "no regions to score"));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let normalized = if hi > lo {
            raw.iter().map(|&z| (z - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; raw.len()]
        };
        let top_k = raw.len().div_ceil(5); // ⌈0.2·V⌉
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            raw[b].partial_cmp(&raw[a]).expect("finite scores").then(a.cmp(&b))
        });
        order.truncate(top_k);
        Ok(ImportanceReport { raw, normalized, top: order, alpha })
    }
}

/// Score each region by its attention-weighted mean in-degree over the
/// dynamic adjacency stack (V,V,T).
pub fn region_importance(adjacency: &Tensor<f32>, alpha: &[f32]) -> Result<ImportanceReport> {
    let shape = adjacency.shape();
    if shape.len() != 3 || shape[0] != shape[1] {
        return Err(Error::shape(
            "region_importance",
            format!("expected (V,V,T) adjacency, got {shape:?}"),
        ));
    }
    let (v, t_count) = (shape[0], shape[2]);
    if t_count == 0 || v == 0 {
        return Err(Error::invalid("region_importance", "empty adjacency stack"));
    }
    if alpha.len() != t_count {
        return Err(Error::shape(
            "region_importance",
            format!("{} attention weights for {t_count} snapshots", alpha.len()),
        ));
    }
    let data = adjacency.data();
    let mut raw = vec![0.0f64; v];
    for (i, z) in raw.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for t in 0..t_count {
            let mut column = 0.0f64;
            for j in 0..v {
                column += data[(j * v + i) * t_count + t] as f64;
            }
            acc += column * alpha[t] as f64;
        }
        *z = acc / t_count as f64;
    }

    ImportanceReport::from_raw(raw, alpha.iter().map(|&a| a as f64).collect())
}

/// Sliding-window Pearson correlation stack of one signal, mapped to [0,1]
/// by (r+1)/2 — the classical dynamic-connectivity baseline the learned
/// adjacency is compared against. Returns (V,V,T).
pub fn pearson_dynamic_fc(x: &Tensor<f32>, window: usize, stride: usize) -> Result<Tensor<f32>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::shape("pearson_dynamic_fc", format!("expected (V,T'), got {shape:?}")));
    }
    let (v, series_len) = (shape[0], shape[1]);
    let windows = split_windows(&x.reshaped(&[1, v, series_len])?, window, stride)?;
    let corr = map_unit_interval(&node_features(&windows)?);
    let t_count = corr.shape()[1];
    corr.reshaped(&[t_count, v, v])?.permuted(&[1, 2, 0])
}

// ---------------------------------------------------------------------------
// Planted-edge recovery
// ---------------------------------------------------------------------------

/// AUROC of mean learned off-diagonal weights against planted edge
/// indicators. Snapshots are assigned to regimes by their window midpoint
/// (t·stride + window/2 in raw samples); learned weights are averaged per
/// (class, regime) cell over all given subjects, each cell with both edge
/// and non-edge pairs is scored, and the cell scores are averaged.
pub fn edge_recovery_auc(
    adjacencies: &[Tensor<f32>],
    labels: &[usize],
    planted: &PlantedGraphs,
    boundaries: &[usize],
    window: usize,
    stride: usize,
) -> Result<f64> {
    if adjacencies.is_empty() || adjacencies.len() != labels.len() {
        return Err(Error::invalid(
            "edge_recovery",
            format!("{} adjacency stacks vs {} labels", adjacencies.len(), labels.len()),
        ));
    }
    if boundaries.len() != planted.regimes + 1 {
        return Err(Error::invalid(
            "edge_recovery",
            format!("{} boundaries for {} regimes", boundaries.len(), planted.regimes),
        ));
    }
    let v = planted.regions;
    let cells = planted.classes * planted.regimes;
    let mut sums = vec![vec![0.0f64; v * v]; cells];
    let mut counts = vec![0usize; cells];

    for (adj, &label) in adjacencies.iter().zip(labels) {
        let shape = adj.shape();
        if shape.len() != 3 || shape[0] != v || shape[1] != v {
            return Err(Error::shape(
                "edge_recovery",
                format!("expected ({v},{v},T) adjacency, got {shape:?}"),
            ));
        }
        if label >= planted.classes {
            return Err(Error::invalid(
                "edge_recovery",
                format!("label {label} outside the {} planted classes", planted.classes),
            ));
        }
        let t_count = shape[2];
        let data = adj.data();
        for t in 0..t_count {
            let midpoint = t * stride + window / 2;
            let regime = match boundaries.windows(2).position(|b| b[0] <= midpoint && midpoint < b[1])
            {
                Some(r) => r,
                None => planted.regimes - 1,
            };
            let cell = label * planted.regimes + regime;
            let sum = &mut sums[cell];
            for i in 0..v {
                for j in 0..v {
                    sum[i * v + j] += data[(i * v + j) * t_count + t] as f64;
                }
            }
            counts[cell] += 1;
        }
    }

    let mut cell_scores = Vec::new();
    for class in 0..planted.classes {
        for regime in 0..planted.regimes {
            let cell = class * planted.regimes + regime;
            if counts[cell] == 0 {
                continue;
            }
            let mut scores = Vec::with_capacity(v * (v - 1));
            let mut indicators = Vec::with_capacity(v * (v - 1));
            for i in 0..v {
                for j in 0..v {
                    if i == j {
                        continue;
                    }
                    scores.push(sums[cell][i * v + j] / counts[cell] as f64);
                    indicators.push(usize::from(planted.get(class, regime, i, j)));
                }
            }
            if indicators.iter().any(|&e| e == 1) && indicators.iter().any(|&e| e == 0) {
                cell_scores.push(auroc(&scores, &indicators)?);
            }
        }
    }
    if cell_scores.is_empty() {
        return Err(Error::invalid(
            "edge_recovery",
            "no (class, regime) cell had both planted and absent edges",
        ));
    }
    Ok(cell_scores.iter().sum::<f64>() / cell_scores.len() as f64)
}

// ---------------------------------------------------------------------------
// Artifact files
// ---------------------------------------------------------------------------

/// Write an adjacency stack (V,V,T): magic, little-endian u32 dims, f32
/// little-endian payload.
pub fn write_adjacency(path: &Path, adjacency: &Tensor<f32>) -> Result<()> {
    let shape = adjacency.shape();
    if shape.len() != 3 || shape[0] != shape[1] {
        return Err(Error::shape(
            "write_adjacency",
            format!("expected (V,V,T), got {shape:?}"),
        ));
    }
    let mut bytes = Vec::with_capacity(17 + adjacency.len() * 4);
    bytes.extend_from_slice(ADJACENCY_MAGIC);
    for &dim in shape {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &x in adjacency.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// Exact inverse of [`write_adjacency`].
pub fn read_adjacency(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let fail = |detail: String| Error::format(path.display().to_string(), detail);
    if bytes.len() < 17 {
        return Err(fail("file shorter than the header".into()));
    }
    if &bytes[0..5] != ADJACENCY_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..5])));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[5 + 4 * k..9 + 4 * k].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let expected = 17 + shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(fail(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes[17..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    Tensor::from_vec(&shape, data.collect())
}

/// Write region scores as CSV: region_index, raw_z, normalized_z,
/// in_top_20pct.
pub fn write_importance(path: &Path, report: &ImportanceReport) -> Result<()> {
    let mut text = String::from("region_index,raw_z,normalized_z,in_top_20pct\n");
    for (i, (&raw, &norm)) in report.raw.iter().zip(&report.normalized).enumerate() {
        let in_top = report.top.contains(&i);
        text.push_str(&format!("{i},{raw},{norm},{in_top}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// One pairwise model comparison for the aso.csv export.
#[derive(Debug, Clone)]
pub struct AsoRow {
    pub model_a: String,
    pub model_b: String,
    pub epsilon_min: f64,
    pub alpha_adjusted: f64,
}

/// Write pairwise ASO results as CSV: model_a, model_b, epsilon_min,
/// alpha_adjusted.
pub fn write_aso(path: &Path, rows: &[AsoRow]) -> Result<()> {
    let mut text = String::from("model_a,model_b,epsilon_min,alpha_adjusted\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.model_a, row.model_b, row.epsilon_min, row.alpha_adjusted
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

// ---------------------------------------------------------------------------
