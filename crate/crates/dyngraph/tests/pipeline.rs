//! End-to-end exercises of the command-line binary: every subcommand, the
//! documented exit codes, and the reproducibility contracts (config echo,
//! deterministic reruns, resume).

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dyngraph")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("binary should spawn");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Tiny dataset flags shared by the tests: 24 subjects, 4 regions, 30
/// samples, 2 regimes.
fn synth_args(out: &Path, seed: &str) -> Vec<String> {
    [
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        seed,
        "--set",
        "synth.subjects=24",
        "--set",
        "synth.regions=4",
        "--set",
        "synth.series_len=30",
        "--set",
        "synth.regimes=2",
        "--set",
        "synth.density=0.3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Small-model training flags against the tiny dataset.
fn train_args(data: &Path, out: &Path, epochs: &str) -> Vec<String> {
    [
        "train",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--deterministic",
        "--quiet",
        "--set",
        "learner.regions=4",
        "--set",
        "learner.window=8",
        "--set",
        "learner.stride=4",
        "--set",
        "learner.layers=1",
        "--set",
        "learner.embed_dim=4",
        "--set",
        "learner.kernel_lens=[2,3]",
        "--set",
        "learner.attn_dim=3",
        "--set",
        "classifier.layers=1",
        "--set",
        "classifier.hidden_dim=4",
        "--set",
        "train.batch_size=8",
        "--set",
        &format!("train.max_epochs={epochs}"),
        "--set",
        "train.patience=50",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_owned(args: &[String]) -> (i32, String, String) {
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run(&refs)
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");

    let (code, stdout, stderr) = run_owned(&synth_args(&data, "3"));
    assert_eq!(code, 0, "synth failed: {stderr}");
    assert!(stdout.contains("24 subjects"), "unexpected synth summary: {stdout}");
    for f in ["data.bin", "labels.csv", "planted.bin", "meta.json", "config.json"] {
        assert!(data.join(f).exists(), "synth should write {f}");
    }

    let (code, stdout, stderr) = run_owned(&train_args(&data, &out, "3"));
    assert_eq!(code, 0, "train failed: {stderr}");
    assert!(stdout.contains("test accuracy"), "train should report test metrics: {stdout}");
    for f in ["best.ckpt", "last.ckpt", "metrics.csv", "summary.json", "config.json"] {
        assert!(out.join(f).exists(), "train should write {f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,train_acc,val_acc,wall_ms"));
    assert_eq!(metrics.lines().count(), 4, "header plus one line per epoch");

    // Eval on the held-out split and on everything; the planted graphs are
    // next to the dataset, so edge recovery is scored too.
    let ckpt = out.join("best.ckpt");
    let (code, stdout, stderr) =
        run(&["eval", ckpt.to_str().unwrap(), data.to_str().unwrap(), "--split", "test"]);
    assert_eq!(code, 0, "eval failed: {stderr}");
    assert!(stdout.contains("test accuracy"), "eval output: {stdout}");
    assert!(stdout.contains("edge recovery auc"), "eval output: {stdout}");

    let (code, stdout, _) =
        run(&["eval", ckpt.to_str().unwrap(), data.to_str().unwrap(), "--split", "all"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("all accuracy"), "eval output: {stdout}");
    assert!(stdout.contains("(24 subjects)"), "eval over all 24: {stdout}");

    // Interpret writes the adjacency stacks and the importance table.
    let interp = tmp.path().join("interp");
    let (code, stdout, stderr) = run(&[
        "interpret",
        ckpt.to_str().unwrap(),
        data.to_str().unwrap(),
        "--subject",
        "1",
        "--out",
        interp.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "interpret failed: {stderr}");
    assert!(stdout.contains("subject 1: predicted class"), "interpret output: {stdout}");
    for f in ["adjacency_learned.bin", "adjacency_pearson.bin", "importance.csv"] {
        assert!(interp.join(f).exists(), "interpret should write {f}");
    }
    let importance = fs::read_to_string(interp.join("importance.csv")).unwrap();
    assert_eq!(importance.lines().count(), 5, "header plus one line per region");

    // The exported stacks parse back with the library reader.
    let learned = dyngraph::evaluation::read_adjacency(&interp.join("adjacency_learned.bin")).unwrap();
    let pearson = dyngraph::evaluation::read_adjacency(&interp.join("adjacency_pearson.bin")).unwrap();
    assert_eq!(learned.shape(), pearson.shape());
    assert_eq!(learned.shape()[0], 4);

    // Compare two score files; all ordered pairs are reported.
    let a = tmp.path().join("a.scores");
    let b = tmp.path().join("b.scores");
    fs::write(&a, "# five seeds\n0.91\n0.88\n0.93\n0.90\n0.89\n").unwrap();
    fs::write(&b, "0.71\n0.68\n0.73\n0.70\n0.69\n").unwrap();
    let cmp_out = tmp.path().join("cmp");
    let (code, stdout, stderr) = run(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        cmp_out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "compare failed: {stderr}");
    assert!(stdout.contains("a vs b"), "compare output: {stdout}");
    let aso = fs::read_to_string(cmp_out.join("aso.csv")).unwrap();
    assert!(aso.starts_with("model_a,model_b,epsilon_min,alpha_adjusted"));
    assert_eq!(aso.lines().count(), 3, "header plus both ordered pairs");
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let (code, _, _) = run_owned(&synth_args(&data, "3"));
    assert_eq!(code, 0);

    // Unknown config key.
    let (code, _, stderr) =
        run(&["train", data.to_str().unwrap(), "--set", "train.batch_sze=4"]);
    assert_eq!(code, 1, "unknown keys are validation errors: {stderr}");
    assert!(stderr.contains("batch_sze"), "the message names the bad key: {stderr}");

    // No dataset anywhere.
    let (code, _, stderr) = run(&["train"]);
    assert_eq!(code, 1, "missing data dir: {stderr}");

    // Synth refuses a non-empty output directory without --force.
    let (code, _, stderr) = run_owned(&synth_args(&data, "3"));
    assert_eq!(code, 1, "non-empty out dir: {stderr}");
    assert!(stderr.contains("--force"), "the fix is suggested: {stderr}");
    let mut forced = synth_args(&data, "3");
    forced.push("--force".into());
    let (code, _, _) = run_owned(&forced);
    assert_eq!(code, 0, "--force overwrites");

    // Compare needs two files, and the files must parse.
    let a = tmp.path().join("a.scores");
    fs::write(&a, "0.9\n").unwrap();
    let (code, _, _) = run(&["compare", a.to_str().unwrap()]);
    assert_eq!(code, 1);
    let bad = tmp.path().join("bad.scores");
    fs::write(&bad, "0.9\nbanana\n").unwrap();
    let (code, _, stderr) =
        run(&["compare", a.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(code, 1, "unparseable score file: {stderr}");
    assert!(stderr.contains("line 2"), "the message points at the line: {stderr}");

    // Bad split name.
    let out = tmp.path().join("run");
    let (code, _, _) = run_owned(&train_args(&data, &out, "1"));
    assert_eq!(code, 0);
    let ckpt = out.join("best.ckpt");
    let (code, _, stderr) =
        run(&["eval", ckpt.to_str().unwrap(), data.to_str().unwrap(), "--split", "bogus"]);
    assert_eq!(code, 1, "unknown split: {stderr}");

    // Subject out of range.
    let (code, _, stderr) = run(&[
        "interpret",
        ckpt.to_str().unwrap(),
        data.to_str().unwrap(),
        "--subject",
        "999",
    ]);
    assert_eq!(code, 1, "subject out of range: {stderr}");
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    // Missing checkpoint file is an I/O failure, not a validation error.
    let (code, _, stderr) = run(&["eval", tmp.path().join("nope.ckpt").to_str().unwrap()]);
    assert_eq!(code, 2, "missing checkpoint: {stderr}");
}

#[test]
fn eval_rejects_a_dataset_with_different_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    assert_eq!(run_owned(&synth_args(&data, "3")).0, 0);
    assert_eq!(run_owned(&train_args(&data, &out, "1")).0, 0);

    // Same generator but 5 regions; the checkpoint's model has 4.
    let other = tmp.path().join("data5");
    let mut args = synth_args(&other, "3");
    for a in &mut args {
        if a == "synth.regions=4" {
            *a = "synth.regions=5".to_string();
        }
    }
    assert_eq!(run_owned(&args).0, 0);

    let ckpt = out.join("best.ckpt");
    let (code, _, stderr) =
        run(&["eval", ckpt.to_str().unwrap(), other.to_str().unwrap()]);
    assert_eq!(code, 1, "region mismatch is rejected: {stderr}");
    assert!(stderr.contains("regions"), "the message explains the mismatch: {stderr}");
}

#[test]
fn gradcheck_passes_and_the_step_hook_fails_it() {
    // The real check: every end-to-end gradient within tolerance.
    let (code, stdout, stderr) = run(&["gradcheck"]);
    assert_eq!(code, 0, "gradcheck failed: {stderr}\n{stdout}");
    assert!(stdout.contains("gradcheck PASS"), "gradcheck output: {stdout}");

    // A huge finite-difference step ruins the comparison; the command must
    // report the failure through its dedicated exit code.
    let (code, stdout, _) = run(&["gradcheck", "--step", "0.5"]);
    assert_eq!(code, 3, "gradcheck exit code should flag the failure");
    assert!(stdout.contains("gradcheck FAIL"), "gradcheck output: {stdout}");
}

#[test]
fn config_echo_reproduces_the_run_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(run_owned(&synth_args(&data, "3")).0, 0);

    let first = tmp.path().join("first");
    assert_eq!(run_owned(&train_args(&data, &first, "3")).0, 0);

    // Feed the echoed config back with no other flags.
    let second = tmp.path().join("second");
    let (code, _, stderr) = run(&[
        "train",
        data.to_str().unwrap(),
        "--config",
        first.join("config.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code, 0, "rerun from echoed config failed: {stderr}");

    for f in ["metrics.csv", "best.ckpt", "last.ckpt"] {
        let a = fs::read(first.join(f)).unwrap();
        let b = fs::read(second.join(f)).unwrap();
        assert_eq!(a, b, "{f} should be byte-identical across the echo round-trip");
    }
}

#[test]
fn synthesis_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(run_owned(&synth_args(&a, "7")).0, 0);
    assert_eq!(run_owned(&synth_args(&b, "7")).0, 0);
    assert_eq!(run_owned(&synth_args(&c, "8")).0, 0);
    for f in ["data.bin", "labels.csv", "planted.bin"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} should match across same-seed runs"
        );
    }
    assert_ne!(
        fs::read(a.join("data.bin")).unwrap(),
        fs::read(c.join("data.bin")).unwrap(),
        "a different seed should change the signals"
    );
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(run_owned(&synth_args(&data, "3")).0, 0);

    // Straight six epochs.
    let full = tmp.path().join("full");
    assert_eq!(run_owned(&train_args(&data, &full, "6")).0, 0);

    // Three epochs, then resume to six against the same directory.
    let halves = tmp.path().join("halves");
    assert_eq!(run_owned(&train_args(&data, &halves, "3")).0, 0);
    let mut second = train_args(&data, &halves, "6");
    second.push("--resume".into());
    second.push(halves.join("last.ckpt").to_str().unwrap().into());
    let (code, _, stderr) = run_owned(&second);
    assert_eq!(code, 0, "resumed run failed: {stderr}");

    assert_eq!(
        fs::read(full.join("last.ckpt")).unwrap(),
        fs::read(halves.join("last.ckpt")).unwrap(),
        "resumed training should land on the identical checkpoint"
    );
    assert_eq!(
        fs::read_to_string(full.join("metrics.csv")).unwrap(),
        fs::read_to_string(halves.join("metrics.csv")).unwrap(),
        "the stitched metrics log should match the uninterrupted one"
    );
}
