//! Synthetic benchmark generator.
//!
//! Plants class- and regime-dependent binary dependency graphs, then drives
//! a piecewise-stationary VAR(1) process over them: within regime k of a
//! class-c subject, x_t = γ·(W/‖W‖₂)·x_{t−1} + σ·ε_t with W the planted
//! graph for (c, k). Dependencies in the signal are therefore exactly the
//! planted edges, which is what makes edge-recovery scoring meaningful.

use std::fs;
use std::path::Path;

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{write_dataset, write_planted, Dataset, PlantedGraphs};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The VAR transition matrix must keep its spectral radius below this.
pub const SPECTRAL_CAP: f64 = 0.95;

/// Fraction of ρ·V² (rounded up) by which the two class graphs must differ.
const MARGIN_FRACTION: f64 = 0.2;

/// Generator settings. Defaults are the desk-scale benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Number of subjects N.
    pub subjects: usize,
    /// Number of regions V.
    pub regions: usize,
    /// Timepoints per subject T'.
    pub series_len: usize,
    /// Number of classes (the generator is two-class).
    pub classes: usize,
    /// Piecewise-stationary segments R.
    pub regimes: usize,
    /// Edge density ρ of each planted graph.
    pub density: f64,
    /// Coupling strength γ (spectral norm of the transition matrix).
    pub coupling: f64,
    /// Innovation noise σ.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            subjects: 200,
            regions: 16,
            series_len: 120,
            classes: 2,
            regimes: 3,
            density: 0.15,
            coupling: 0.8,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::config("synth: need at least one subject"));
        }
        if self.regions < 2 {
            return Err(Error::config("synth: need at least two regions"));
        }
        if self.classes != 2 {
            return Err(Error::config("synth: the generator is two-class (classes = 2)"));
        }
        if self.regimes == 0 || self.series_len < self.regimes {
            return Err(Error::config(format!(
                "synth: {} timepoints cannot hold {} regimes",
                self.series_len, self.regimes
            )));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::config("synth: density must lie in [0, 1]"));
        }
        if self.coupling < 0.0 || !self.coupling.is_finite() {
            return Err(Error::config("synth: coupling must be finite and non-negative"));
        }
        if self.noise <= 0.0 || !self.noise.is_finite() {
            return Err(Error::config("synth: noise must be finite and positive"));
        }
        let margin = self.margin_edges();
        if margin > 2 * self.edges_per_graph() {
            return Err(Error::config(format!(
                "synth: density {} is too low to plant {} differing edges",
                self.density, margin
            )));
        }
        Ok(())
    }

    /// Exact undirected edge count of each planted graph.
    pub fn edges_per_graph(&self) -> usize {
        let pairs = self.regions * (self.regions - 1) / 2;
        (self.density * pairs as f64).round() as usize
    }

    /// Required undirected-edge difference between the class graphs.
    pub fn margin_edges(&self) -> usize {
        (MARGIN_FRACTION * self.density * (self.regions * self.regions) as f64).ceil() as usize
    }

    /// Regime boundaries b_0 = 0 < … < b_R = T', segment k = [b_k, b_{k+1}).
    pub fn regime_boundaries(&self) -> Vec<usize> {
        (0..=self.regimes).map(|k| k * self.series_len / self.regimes).collect()
    }
}

/// Everything `meta.json` records about a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthMeta {
    pub spec: SyntheticSpec,
    pub regime_boundaries: Vec<usize>,
    /// Coupling actually used (pulled below the spectral cap if needed).
    pub effective_coupling: f64,
    pub coupling_clamped: bool,
    /// Required edge difference between the class graphs, per regime.
    pub margin_edges: usize,
    /// File holding the planted graphs, relative to the dataset directory.
    pub planted_file: String,
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Spectral norm of a dense symmetric V×V matrix by 100 rounds of power
/// iteration from the normalized all-ones vector. Zero matrices return 0.
pub fn spectral_norm(w: &[f64], v: usize) -> f64 {
    assert_eq!(w.len(), v * v, "matrix must be V×V");
    let mut vec = vec![1.0 / (v as f64).sqrt(); v];
    let mut norm = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; v];
        for i in 0..v {
            let mut acc = 0.0;
            for j in 0..v {
                acc += w[i * v + j] * vec[j];
            }
            next[i] = acc;
        }
        norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return 0.0;
        }
        for x in &mut next {
            *x /= norm;
        }
        vec = next;
    }
    norm
}

/// Draw one graph with exactly `edges` undirected edges.
fn draw_graph(
    planted: &mut PlantedGraphs,
    class: usize,
    regime: usize,
    pairs: &[(usize, usize)],
    edges: usize,
    rng: &mut ChaCha8Rng,
) {
    for &(i, j) in pairs {
        planted.set(class, regime, i, j, false);
    }
    for idx in rand::seq::index::sample(rng, pairs.len(), edges) {
        let (i, j) = pairs[idx];
        planted.set(class, regime, i, j, true);
    }
}

/// Generate a dataset with planted structure. Same spec ⇒ byte-identical
/// output: graphs come from the master seed's stream 0 and subject i's
/// signal from stream i+1.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, PlantedGraphs, SynthMeta)> {
    spec.validate()?;
    let (n, v, t_len, r) = (spec.subjects, spec.regions, spec.series_len, spec.regimes);
    let clamped = spec.coupling >= SPECTRAL_CAP;
    let effective = if clamped { SPECTRAL_CAP * (1.0 - 1e-3) } else { spec.coupling };

    // Planted graphs: class 0 free, class 1 redrawn until the margin holds.
    let pairs: Vec<(usize, usize)> =
        (0..v).flat_map(|i| (i + 1..v).map(move |j| (i, j))).collect();
    let edges = spec.edges_per_graph();
    let margin = spec.margin_edges();
    let mut planted = PlantedGraphs::new(2, r, v);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    for regime in 0..r {
        draw_graph(&mut planted, 0, regime, &pairs, edges, &mut rng);
        let mut ok = false;
        for _ in 0..1000 {
            draw_graph(&mut planted, 1, regime, &pairs, edges, &mut rng);
            if planted.differing_edges(0, 1, regime) >= margin {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::numeric(
                "synth",
                format!("could not plant {margin} differing edges in 1000 draws (regime {regime})"),
            ));
        }
    }

    // Per-(class, regime) transition matrices γ·W/‖W‖₂.
    let mut transitions = vec![vec![0.0f64; v * v]; 2 * r];
    for class in 0..2 {
        for regime in 0..r {
            let w: Vec<f64> = planted
                .adjacency(class, regime)
                .data()
                .iter()
                .map(|&x| x as f64)
                .collect();
            let norm = spectral_norm(&w, v);
            let scale = if norm < 1e-9 { 0.0 } else { effective / norm };
            for (b, &wij) in transitions[class * r + regime].iter_mut().zip(&w) {
                *b = scale * wij;
            }
        }
    }

    let boundaries = spec.regime_boundaries();
    let regime_of: Vec<usize> = (0..t_len)
        .map(|t| boundaries.windows(2).position(|b| b[0] <= t && t < b[1]).unwrap())
        .collect();

    // Simulate and z-score each subject.
    let normal = StandardNormal;
    let mut signals = vec![0.0f32; n * v * t_len];
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for subject in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(subject as u64 + 1);
        let class = labels[subject];
        let mut series = vec![0.0f64; v * t_len]; // row-major (V, T')
        let mut prev = vec![0.0f64; v];
        let mut cur = vec![0.0f64; v];
        for t in 0..t_len {
            let b = &transitions[class * r + regime_of[t]];
            for i in 0..v {
                let mut acc = 0.0;
                for j in 0..v {
                    acc += b[i * v + j] * prev[j];
                }
                let eps: f64 = normal.sample(&mut rng);
                cur[i] = acc + spec.noise * eps;
            }
            for i in 0..v {
                series[i * t_len + t] = cur[i];
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        for i in 0..v {
            let row = &mut series[i * t_len..(i + 1) * t_len];
            let mean = row.iter().sum::<f64>() / t_len as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (t_len as f64 - 1.0).max(1.0);
            let sd = var.sqrt().max(1e-12);
            for x in row.iter_mut() {
                *x = (*x - mean) / sd;
            }
        }
        let base = subject * v * t_len;
        for (k, &x) in series.iter().enumerate() {
            signals[base + k] = x as f32;
        }
    }

    let dataset = Dataset::new(Tensor::from_vec(&[n, v, t_len], signals)?, labels)?;
    let meta = SynthMeta {
        spec: spec.clone(),
        regime_boundaries: boundaries,
        effective_coupling: effective,
        coupling_clamped: clamped,
        margin_edges: margin,
        planted_file: "planted.bin".to_string(),
    };
    Ok((dataset, planted, meta))
}

/// Write the full dataset directory: data.bin, labels.csv, planted.bin,
/// meta.json.
pub fn write_synth_dir(
    dir: &Path,
    dataset: &Dataset,
    planted: &PlantedGraphs,
    meta: &SynthMeta,
) -> Result<()> {
    write_dataset(dir, dataset)?;
    write_planted(&dir.join(&meta.planted_file), planted)?;
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    fs::write(&path, json)
        .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    Ok(())
}

/// Read `meta.json` back.
pub fn read_meta(path: &Path) -> Result<SynthMeta> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

// ---------------------------------------------------------------------------
// Generator oracle: lag-1 correlation contrast
// ---------------------------------------------------------------------------

/// One-sided Mann–Whitney rank-sum p-value (normal approximation with
/// average ranks and tie-corrected variance) for the hypothesis that
/// `greater` is stochastically larger than `lesser`. Degenerate pooled data
/// (all values tied) returns 1.0.
pub fn rank_sum_p(greater: &[f64], lesser: &[f64]) -> Result<f64> {
    let (n1, n2) = (greater.len(), lesser.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("rank_sum_p", "both samples must be non-empty"));
    }
    let mut pooled: Vec<(f64, usize)> = greater
        .iter()
        .map(|&x| (x, 0))
        .chain(lesser.iter().map(|&x| (x, 1)))
        .collect();
    if pooled.iter().any(|(x, _)| !x.is_finite()) {
        return Err(Error::invalid("rank_sum_p", "samples must be finite"));
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values compare"));

    let n = n1 + n2;
    let mut r1 = 0.0f64;
    let mut tie_term = 0.0f64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let count = (end - start) as f64;
        // Average rank of this tie group (ranks are 1-based).
        let rank = (start + 1 + end) as f64 / 2.0;
        for &(_, which) in &pooled[start..end] {
            if which == 0 {
                r1 += rank;
            }
        }
        tie_term += count * count * count - count;
        start = end;
    }
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let mean = (n1 * n2) as f64 / 2.0;
    let nf = n as f64;
    let var = (n1 * n2) as f64 / 12.0 * (nf + 1.0 - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (u1 - mean) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
    Ok(1.0 - std_normal.cdf(z))
}

/// Absolute lag-1 cross-correlation of every region pair within every
/// regime, split by whether the pair is a planted edge for the subject's
/// class. Returns (edge values, non-edge values).
pub fn lag1_contrast(
    dataset: &Dataset,
    planted: &PlantedGraphs,
    boundaries: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (v, t_len) = (dataset.regions(), dataset.series_len());
    if planted.regions != v {
        return Err(Error::invalid("lag1_contrast", "planted graphs don't match the dataset"));
    }
    if boundaries.first() != Some(&0) || boundaries.last() != Some(&t_len) {
        return Err(Error::invalid("lag1_contrast", "boundaries must span [0, T']"));
    }
    let corr = |a: &[f64], b: &[f64]| -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        if va <= 0.0 || vb <= 0.0 {
            return 0.0;
        }
        cov / (va.sqrt() * vb.sqrt())
    };
    let mut edge_vals = Vec::new();
    let mut non_edge_vals = Vec::new();
    for subject in 0..dataset.len() {
        let class = dataset.labels[subject];
        if class >= planted.classes {
            return Err(Error::invalid("lag1_contrast", "label outside the planted classes"));
        }
        let sig = dataset.subject(subject)?;
        let row = |i: usize, s: usize, e: usize| -> Vec<f64> {
            (s..e).map(|t| sig.at(&[i, t]) as f64).collect()
        };
        for (regime, w) in boundaries.windows(2).enumerate() {
            let (s, e) = (w[0], w[1]);
            if e - s < 3 {
                continue; // too short for a meaningful lag-1 estimate
            }
            for i in 0..v {
                for j in i + 1..v {
                    let fwd = corr(&row(i, s, e - 1), &row(j, s + 1, e)).abs();
                    let bwd = corr(&row(j, s, e - 1), &row(i, s + 1, e)).abs();
                    let val = fwd.max(bwd);
                    if planted.get(class, regime, i, j) {
                        edge_vals.push(val);
                    } else {
                        non_edge_vals.push(val);
                    }
                }
            }
        }
    }
    Ok((edge_vals, non_edge_vals))
}

/// One-sided p-value that planted-edge pairs show higher lag-1 correlation
/// than non-edge pairs. This is the generator's signal-strength oracle.
pub fn generator_oracle_p(
    dataset: &Dataset,
    planted: &PlantedGraphs,
    boundaries: &[usize],
) -> Result<f64> {
    let (edges, non_edges) = lag1_contrast(dataset, planted, boundaries)?;
    rank_sum_p(&edges, &non_edges)
}

// ---------------------------------------------------------------------------
