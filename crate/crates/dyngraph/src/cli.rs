//! Command-line interface: dataset generation, training, evaluation,
//! interpretability exports, pairwise significance testing, and the
//! end-to-end gradient check.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime/numeric error,
//! 3 gradient-check failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use crate::classifier::ClassifierConfig;
use crate::config::{config_from_value, load_config, parse_set_flag, RunConfig};
use crate::data::{read_dataset, read_planted, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy, aso_epsilon_min, auroc, bonferroni, edge_recovery_auc, pearson_dynamic_fc,
    region_importance, write_adjacency, write_aso, write_importance, AsoRow, AsoSettings,
    ImportanceReport,
};
use crate::learner::LearnerConfig;
use crate::model::{model_gradcheck, GradCheckSettings, Model};
use crate::objective::LossWeights;
use crate::synth::{generate, read_meta, write_synth_dir};
use crate::tensor::ops::set_parallel;
use crate::tensor::Tensor;
use crate::trainer::{
    crop_batch, install_checkpoint, load_checkpoint, temporal_crop, train, training_split,
    Checkpoint, TrainOptions,
};

/// Dynamic-graph learning pipeline for multivariate timeseries.
#[derive(Parser)]
#[command(name = "dyngraph", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub globals: GlobalArgs,
}

#[derive(Args)]
pub struct GlobalArgs {
    /// Config file (.toml or .json); defaults cover every key.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Shared seed applied to both generation and training.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Bitwise-reproducible mode: sequential kernels, zeroed timings.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Override a config key (repeatable), e.g. --set train.batch_size=10.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-graph dataset.
    Synth,
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Export interpretability artifacts from a checkpoint.
    Interpret(InterpretArgs),
    /// Pairwise almost-stochastic-order test over score files.
    Compare(CompareArgs),
    /// Finite-difference check of every end-to-end gradient (64-bit).
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory holding data.bin and labels.csv.
    #[arg(value_name = "DATA_DIR")]
    pub data: Option<PathBuf>,
    /// Continue from a previous run's checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    /// Ablation: single causal convolution per layer instead of
    /// multi-scale branches.
    #[arg(long)]
    pub no_inception: bool,
    /// Ablation: windowed Pearson adjacency instead of learned attention.
    #[arg(long)]
    pub no_self_attention: bool,
    /// Ablation: keep every attention weight (no soft threshold) and zero
    /// the sparsity penalty.
    #[arg(long)]
    pub no_sparsity: bool,
    /// Ablation: unweighted snapshot sum instead of temporal attention.
    #[arg(long)]
    pub no_temporal_attention: bool,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint file (e.g. out/best.ckpt).
    #[arg(value_name = "CKPT")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(value_name = "DATA_DIR")]
    pub data: Option<PathBuf>,
    /// Subjects to score: train, val, test, or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args)]
pub struct InterpretArgs {
    /// Checkpoint file (e.g. out/best.ckpt).
    #[arg(value_name = "CKPT")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(value_name = "DATA_DIR")]
    pub data: Option<PathBuf>,
    /// Subject whose adjacency stacks are exported.
    #[arg(long, default_value_t = 0)]
    pub subject: usize,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Two or more score files, one metric value per line (# comments).
    #[arg(value_name = "SCORES", num_args = 0..)]
    pub scores: Vec<PathBuf>,
    /// Family significance level before the Bonferroni adjustment.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Probe batch size.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn collect_overrides(globals: &GlobalArgs) -> Result<Vec<(String, String)>> {
    let mut overrides = globals
        .set
        .iter()
        .map(|s| parse_set_flag(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = globals.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    if globals.deterministic {
        overrides.push(("train.deterministic".to_string(), "true".to_string()));
    }
    Ok(overrides)
}

/// Effective config from file/defaults plus overrides.
fn effective_config(globals: &GlobalArgs) -> Result<RunConfig> {
    load_config(globals.config.as_deref(), &collect_overrides(globals)?)
}

/// Config for checkpoint-consuming commands: an explicit --config wins;
/// otherwise the snapshot embedded in the checkpoint is used so a run's
/// artifacts stay self-describing (ablation flags included).
fn checkpoint_config(globals: &GlobalArgs, ckpt: &Checkpoint) -> Result<RunConfig> {
    if globals.config.is_none() && ckpt.config.is_object() {
        let doc = toml::Value::try_from(&ckpt.config)
            .map_err(|e| Error::config(format!("embedded checkpoint config: {e}")))?;
        config_from_value(doc, &collect_overrides(globals)?)
    } else {
        effective_config(globals)
    }
}

fn resolve_out(globals: &GlobalArgs, config: &RunConfig, default_name: &str) -> PathBuf {
    globals
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default_name))
}

fn resolve_data(arg: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    arg.or_else(|| config.data_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::config("no dataset directory given (argument or data_dir key)"))
}

/// Create the output directory; refuse to write a fresh run into a
/// non-empty one unless --force (or resuming).
fn prepare_out(dir: &Path, force: bool, allow_existing: bool) -> Result<()> {
    if !force && !allow_existing && dir.exists() {
        let occupied = fs::read_dir(dir)
            .map(|mut entries| entries.next().is_some())
            .unwrap_or(false);
        if occupied {
            return Err(Error::invalid(
                "out",
                format!("{} is not empty (pass --force to overwrite)", dir.display()),
            ));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))
}

fn echo_config(dir: &Path, config: &RunConfig) -> Result<()> {
    let path = dir.join("config.json");
    fs::write(&path, config.to_json()?)
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn load_model(config: &RunConfig, dataset: &Dataset, ckpt: &Checkpoint) -> Result<(Model<f32>, usize)> {
    if config.learner.regions != dataset.regions() {
        return Err(Error::config(format!(
            "model is configured for {} regions but the dataset has {}",
            config.learner.regions,
            dataset.regions()
        )));
    }
    let crop_len = config.train.crop_len.unwrap_or_else(|| dataset.series_len());
    if crop_len > dataset.series_len() {
        return Err(Error::config(format!(
            "crop length {crop_len} exceeds the series length {}",
            dataset.series_len()
        )));
    }
    let mut model = Model::<f32>::init(
        config.learner.clone(),
        config.classifier.clone(),
        crop_len,
        config.train.seed,
    )?;
    install_checkpoint(&mut model, ckpt)?;
    Ok((model, crop_len))
}

fn split_indices(dataset: &Dataset, config: &RunConfig, which: &str) -> Result<Vec<usize>> {
    if which == "all" {
        return Ok((0..dataset.len()).collect());
    }
    let split = training_split(&dataset.labels, &config.train)?;
    match which {
        "train" => Ok(split.train),
        "val" => Ok(split.val),
        "test" => Ok(split.test),
        other => Err(Error::config(format!(
            "unknown split {other:?} (expected train, val, test, or all)"
        ))),
    }
}

/// Accuracy plus, for binary models, AUROC of the positive class.
fn score_split(
    model: &Model<f32>,
    dataset: &Dataset,
    indices: &[usize],
    crop_len: usize,
    batch_size: usize,
) -> Result<(f64, Option<f64>)> {
    if indices.is_empty() {
        return Err(Error::invalid("eval", "the requested split is empty"));
    }
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    let mut scores = Vec::with_capacity(indices.len());
    let binary = model.classifier.classes == 2;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, chunk_labels) = crop_batch(dataset, chunk, crop_len)?;
        let (p, probs) = model.predict(&x)?;
        for (k, &label) in chunk_labels.iter().enumerate() {
            preds.push(p[k]);
            labels.push(label);
            if binary {
                scores.push(probs.at(&[k, 1]) as f64);
            }
        }
    }
    let acc = accuracy(&preds, &labels)?;
    let roc = if binary && labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1) {
        Some(auroc(&scores, &labels)?)
    } else {
        None
    };
    Ok((acc, roc))
}

/// Fraction of exactly-zero off-diagonal entries in a (V,V,T) stack.
fn zero_fraction(adjacency: &Tensor<f32>) -> f64 {
    let shape = adjacency.shape();
    let (v, t_count) = (shape[0], shape[2]);
    if v < 2 {
        return 0.0;
    }
    let data = adjacency.data();
    let mut zeros = 0usize;
    for i in 0..v {
        for j in 0..v {
            if i == j {
                continue;
            }
            for t in 0..t_count {
                if data[(i * v + j) * t_count + t] == 0.0 {
                    zeros += 1;
                }
            }
        }
    }
    zeros as f64 / (v * (v - 1) * t_count) as f64
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("{name} serialization failed: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Run one parsed invocation; the return value is the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if cli.globals.deterministic {
        set_parallel(false);
    }
    match cli.command {
        Command::Synth => cmd_synth(&cli.globals),
        Command::Train(args) => cmd_train(&cli.globals, args),
        Command::Eval(args) => cmd_eval(&cli.globals, args),
        Command::Interpret(args) => cmd_interpret(&cli.globals, args),
        Command::Compare(args) => cmd_compare(&cli.globals, args),
        Command::Gradcheck(args) => cmd_gradcheck(&cli.globals, args),
    }
}

fn cmd_synth(globals: &GlobalArgs) -> Result<i32> {
    let config = effective_config(globals)?;
    let out = resolve_out(globals, &config, "dataset");
    prepare_out(&out, globals.force, false)?;
    let (dataset, planted, meta) = generate(&config.synth)?;
    write_synth_dir(&out, &dataset, &planted, &meta)?;
    echo_config(&out, &config)?;
    println!(
        "wrote {} subjects (V={}, T'={}) to {}",
        dataset.len(),
        dataset.regions(),
        dataset.series_len(),
        out.display()
    );
    println!(
        "planted {} classes x {} regimes at density {} ({} edges per graph), coupling {:.3}{}",
        planted.classes,
        planted.regimes,
        config.synth.density,
        config.synth.edges_per_graph(),
        meta.effective_coupling,
        if meta.coupling_clamped { " (clamped below the spectral cap)" } else { "" }
    );
    Ok(0)
}

fn cmd_train(globals: &GlobalArgs, args: TrainArgs) -> Result<i32> {
    let mut config = effective_config(globals)?;
    if args.no_inception {
        config.learner.use_inception = false;
    }
    if args.no_self_attention {
        config.learner.use_self_attention = false;
    }
    if args.no_sparsity {
        config.learner.use_sparsity = false;
        config.loss.lambda_sp = 0.0;
    }
    if args.no_temporal_attention {
        config.classifier.use_temporal_attention = false;
    }

    let data_dir = resolve_data(args.data, &config)?;
    let dataset = read_dataset(&data_dir)?;
    if config.learner.regions != dataset.regions() {
        return Err(Error::config(format!(
            "learner.regions = {} but the dataset has {} regions",
            config.learner.regions,
            dataset.regions()
        )));
    }

    let out = resolve_out(globals, &config, "out");
    prepare_out(&out, globals.force, args.resume.is_some())?;
    echo_config(&out, &config)?;
    let snapshot = serde_json::to_value(&config)
        .map_err(|e| Error::config(format!("config snapshot failed: {e}")))?;

    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        resume: args.resume,
        config_snapshot: snapshot,
        progress: !args.quiet,
    };
    let outcome = train(
        &dataset,
        &config.learner,
        &config.classifier,
        &config.loss,
        &config.train,
        &opts,
    )?;

    let crop_len = config.train.crop_len.unwrap_or_else(|| dataset.series_len());
    let (test_acc, test_auroc) = score_split(
        &outcome.model,
        &dataset,
        &outcome.split.test,
        crop_len,
        config.train.batch_size,
    )?;

    println!(
        "best val accuracy {:.4} at epoch {} ({} epochs run{})",
        outcome.best_val_acc,
        outcome.best_epoch,
        outcome.epochs_run,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    print!("test accuracy {test_acc:.4}");
    match test_auroc {
        Some(a) => println!(", test auroc {a:.4}"),
        None => println!(),
    }

    write_json(
        &out,
        "summary.json",
        &serde_json::json!({
            "best_val_acc": outcome.best_val_acc,
            "best_epoch": outcome.best_epoch,
            "epochs_run": outcome.epochs_run,
            "stopped_early": outcome.stopped_early,
            "test_accuracy": test_acc,
            "test_auroc": test_auroc,
        }),
    )?;
    Ok(0)
}

fn cmd_eval(globals: &GlobalArgs, args: EvalArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let config = checkpoint_config(globals, &ckpt)?;
    let data_dir = resolve_data(args.data, &config)?;
    let dataset = read_dataset(&data_dir)?;
    let (model, crop_len) = load_model(&config, &dataset, &ckpt)?;
    let indices = split_indices(&dataset, &config, &args.split)?;

    let (acc, roc) = score_split(&model, &dataset, &indices, crop_len, config.train.batch_size)?;
    println!("{} accuracy {acc:.4} ({} subjects)", args.split, indices.len());
    match roc {
        Some(a) => println!("{} auroc {a:.4}", args.split),
        None => println!("{} auroc n/a (needs both binary classes)", args.split),
    }

    // Planted-edge recovery whenever the dataset ships its ground truth.
    let planted_path = data_dir.join("planted.bin");
    let mut edge_auc = None;
    if planted_path.exists() {
        let planted = read_planted(&planted_path)?;
        let meta = read_meta(&data_dir.join("meta.json"))?;
        let mut stacks = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            let (x, chunk_labels) = crop_batch(&dataset, &[i], crop_len)?;
            let graph = model.dynamic_graph(&x.reshaped(&[dataset.regions(), crop_len])?)?;
            stacks.push(graph.adjacency);
            labels.push(chunk_labels[0]);
        }
        let auc = edge_recovery_auc(
            &stacks,
            &labels,
            &planted,
            &meta.regime_boundaries,
            config.learner.window,
            config.learner.stride,
        )?;
        println!("edge recovery auc {auc:.4}");
        edge_auc = Some(auc);
    }

    if globals.out.is_some() {
        let out = resolve_out(globals, &config, "out");
        prepare_out(&out, true, true)?;
        write_json(
            &out,
            "eval.json",
            &serde_json::json!({
                "split": args.split,
                "subjects": indices.len(),
                "accuracy": acc,
                "auroc": roc,
                "edge_recovery_auc": edge_auc,
            }),
        )?;
    }
    Ok(0)
}

fn cmd_interpret(globals: &GlobalArgs, args: InterpretArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let config = checkpoint_config(globals, &ckpt)?;
    let data_dir = resolve_data(args.data, &config)?;
    let dataset = read_dataset(&data_dir)?;
    let (model, crop_len) = load_model(&config, &dataset, &ckpt)?;
    if args.subject >= dataset.len() {
        return Err(Error::invalid(
            "interpret",
            format!("subject {} out of range (dataset has {})", args.subject, dataset.len()),
        ));
    }
    let out = resolve_out(globals, &config, "out");
    prepare_out(&out, true, true)?;
    echo_config(&out, &config)?;

    // Chosen subject: learned stack next to the windowed-Pearson baseline.
    let mut eval_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let x = temporal_crop(&dataset.subject(args.subject)?, crop_len, false, &mut eval_rng)?;
    let explanation = model.explain(&x)?;
    let learned = &explanation.graph.adjacency;
    let pearson = pearson_dynamic_fc(&x, config.learner.window, config.learner.stride)?;
    write_adjacency(&out.join("adjacency_learned.bin"), learned)?;
    write_adjacency(&out.join("adjacency_pearson.bin"), &pearson)?;
    let (learned_zeros, pearson_zeros) = (zero_fraction(learned), zero_fraction(&pearson));
    println!(
        "subject {}: predicted class {} (true {})",
        args.subject, explanation.predicted, dataset.labels[args.subject]
    );
    println!(
        "off-diagonal zero fraction: learned {learned_zeros:.4}, pearson baseline {pearson_zeros:.4}"
    );

    // Test-set aggregate importance: average the raw attention-weighted
    // degrees, then normalize the aggregate.
    let indices = split_indices(&dataset, &config, "test")?;
    let v = dataset.regions();
    let t_count = explanation.alpha.len();
    let mut raw_sum = vec![0.0f64; v];
    let mut alpha_sum = vec![0.0f64; t_count];
    for &i in &indices {
        let xi = temporal_crop(&dataset.subject(i)?, crop_len, false, &mut eval_rng)?;
        let ex = model.explain(&xi)?;
        let report = region_importance(&ex.graph.adjacency, &ex.alpha)?;
        for (acc, z) in raw_sum.iter_mut().zip(&report.raw) {
            *acc += z;
        }
        for (acc, a) in alpha_sum.iter_mut().zip(&report.alpha) {
            *acc += a;
        }
    }
    let n = indices.len() as f64;
    let report = ImportanceReport::from_raw(
        raw_sum.into_iter().map(|z| z / n).collect(),
        alpha_sum.into_iter().map(|a| a / n).collect(),
    )?;
    write_importance(&out.join("importance.csv"), &report)?;
    println!(
        "top {} of {} regions by temporally weighted degree: {:?}",
        report.top.len(),
        v,
        report.top
    );
    Ok(0)
}

fn read_scores(path: &Path) -> Result<(String, Vec<f64>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut scores = Vec::new();
    for (num, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| {
            Error::format(
                path.display().to_string(),
                format!("line {}: {line:?} is not a number", num + 1),
            )
        })?;
        scores.push(value);
    }
    if scores.is_empty() {
        return Err(Error::format(path.display().to_string(), "no scores found"));
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scores")
        .to_string();
    Ok((name, scores))
}

fn cmd_compare(globals: &GlobalArgs, args: CompareArgs) -> Result<i32> {
    if args.scores.len() < 2 {
        return Err(Error::invalid("compare", "need at least two score files"));
    }
    let config = effective_config(globals)?;
    let sets = args.scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;

    let comparisons = sets.len() * (sets.len() - 1) / 2;
    let alpha_adjusted = bonferroni(args.alpha, comparisons)?;
    let settings = AsoSettings { alpha: alpha_adjusted, seed: config.train.seed, ..Default::default() };

    let mut rows = Vec::new();
    for (i, (name_a, a)) in sets.iter().enumerate() {
        for (j, (name_b, b)) in sets.iter().enumerate() {
            if i == j {
                continue;
            }
            let eps = aso_epsilon_min(a, b, &settings)?;
            println!("{name_a} vs {name_b}: epsilon_min {eps:.4} (alpha {alpha_adjusted:.5})");
            rows.push(AsoRow {
                model_a: name_a.clone(),
                model_b: name_b.clone(),
                epsilon_min: eps,
                alpha_adjusted,
            });
        }
    }
    let out = resolve_out(globals, &config, "out");
    prepare_out(&out, true, true)?;
    write_aso(&out.join("aso.csv"), &rows)?;
    println!("wrote {}", out.join("aso.csv").display());
    Ok(0)
}

fn cmd_gradcheck(globals: &GlobalArgs, args: GradcheckArgs) -> Result<i32> {
    // A deliberately small end-to-end model keeps the 64-bit
    // finite-difference sweep under a minute while touching every layer.
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
    let weights = LossWeights::default();
    let defaults = GradCheckSettings::default();
    let settings = GradCheckSettings {
        batch: args.batch,
        seed: globals.seed.unwrap_or(defaults.seed),
        step: args.step,
        tolerance: args.tolerance,
        ..defaults
    };
    let series_len = 24;

    let report = model_gradcheck(&learner, &classifier, &weights, series_len, &settings)?;
    let mut rows = report.rows.clone();
    rows.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).expect("finite errors"));
    println!("{:<28} {:>9} {:>14}", "parameter", "elements", "max rel err");
    for row in &rows {
        println!("{:<28} {:>9} {:>14.3e}", row.name, row.elements, row.max_rel_err);
    }
    println!(
        "worst relative error {:.3e} against tolerance {:.1e} over {} parameters",
        report.worst,
        report.tolerance,
        rows.len()
    );
    if report.passed() {
        println!("gradcheck PASS");
        Ok(0)
    } else {
        println!("gradcheck FAIL");
        Ok(3)
    }
}
