//! End-to-end behaviour of the `deepquality` binary: exit codes, artifacts and
//! reproducibility on tiny workloads.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepquality::imageio::save_gray_png;
use deepquality::scenes::procedural_image;
use deepquality_cli::commands::score::ScoreReport;
use deepquality_cli::pipeline::EvalReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deepquality"));
    c.env_remove("DEEPQUALITY_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_tiny(out: &Path, seed: &str) -> PathBuf {
    let o = run(&[
        "synth", "--procedural", "3", "--size", "96", "--kinds", "blur,contrast", "--seed", seed, "--out", s(out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("manifest.jsonl")
}

fn train_tiny(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--manifest", s(manifest), "--out", s(out), "--seed", "5", "--stride", "32",
        "--patches-per-image", "4", "--conv-channels", "2,2,2", "--hidden", "8", "--epochs", "2",
        "--batch-size", "8", "--test-fraction", "0.34",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn synth_on_empty_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&["synth", "--input", s(&empty), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no input images"), "{}", stderr(&o));
}

#[test]
fn synth_counts_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_tiny(&dir.path().join("a"), "3");
    let b = synth_tiny(&dir.path().join("b"), "3");
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 3 * 2 * 5);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let pngs = fs::read_dir(dir.path().join("a/blur")).unwrap().count();
    assert_eq!(pngs, 15);
    assert!(dir.path().join("a/config.toml").is_file());
}

#[test]
fn synth_skips_unreadable_inputs_but_fails_when_all_are() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    fs::write(input.join("broken.png"), b"not a png").unwrap();
    let o = run(&["synth", "--input", s(&input), "--out", s(&dir.path().join("o1"))]);
    assert_eq!(o.status.code(), Some(2));
    save_gray_png(input.join("good.png"), &procedural_image::<f32>(80, 80, 1)).unwrap();
    let o = run(&["synth", "--input", s(&input), "--out", s(&dir.path().join("o2")), "--kinds", "blur"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.png"));
    assert_eq!(fs::read_to_string(dir.path().join("o2/manifest.jsonl")).unwrap().lines().count(), 5);
}

#[test]
fn train_with_missing_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope/manifest.jsonl");
    let o = run(&["train", "--manifest", s(&missing), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn train_writes_artifacts_and_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(&dir.path().join("corpus"), "1");
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    let o = train_tiny(&manifest, &r1, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o2 = bin()
        .env("DEEPQUALITY_WORKERS", "3")
        .args(["train", "--manifest", s(&manifest), "--out", s(&r2), "--seed", "5", "--stride", "32"])
        .args(["--patches-per-image", "4", "--conv-channels", "2,2,2", "--hidden", "8", "--epochs", "2"])
        .args(["--batch-size", "8", "--test-fraction", "0.34"])
        .output()
        .unwrap();
    assert!(o2.status.success(), "{}", stderr(&o2));
    for f in ["config.toml", "split.json", "metrics.jsonl", "summary.csv", "report.json", "images.csv", "model.dqm", "best.dqm"] {
        assert!(r1.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(r1.join("metrics.jsonl")).unwrap().lines().count(), 2);
    let sum = |d: &Path| fs::read_to_string(d.join("model.dqm.sha256")).unwrap();
    assert_eq!(sum(&r1), sum(&r2));
    assert_eq!(fs::read(r1.join("model.dqm")).unwrap(), fs::read(r2.join("model.dqm")).unwrap());
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(&dir.path().join("corpus"), "2");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 9\n[training]\nepochs = 1\nlearning_rate = 0.05\n[pooling]\nstride = 16\n").unwrap();
    let out = dir.path().join("run");
    let o = train_tiny(&manifest, &out, &["--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let effective: toml::Value = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    // flags win
    assert_eq!(effective["seed"].as_integer(), Some(5));
    assert_eq!(effective["training"]["epochs"].as_integer(), Some(2));
    assert_eq!(effective["pooling"]["stride"].as_integer(), Some(32));
    // file beats defaults
    assert_eq!(effective["training"]["learning_rate"].as_float(), Some(0.05));
    // defaults fill the rest
    assert_eq!(effective["training"]["batch_size"].as_integer(), Some(8));
    assert_eq!(effective["training"]["l2_lambda"].as_float(), Some(1e-4));
}

#[test]
fn eval_and_score_on_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(&dir.path().join("corpus"), "4");
    let run_dir = dir.path().join("run");
    let o = train_tiny(&manifest, &run_dir, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = run_dir.join("model.dqm");

    let eval_dir = dir.path().join("eval");
    let o = run(&[
        "eval", "--model", s(&model), "--manifest", s(&manifest), "--split", s(&run_dir.join("split.json")),
        "--kinds", "blur,contrast", "--stride", "32", "--patches-per-image", "4", "--out", s(&eval_dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.per_distortion.len(), 2);
    let train_report: EvalReport = serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    // same held-out images, same pooling: the patch numbers must agree
    assert_eq!(report.patches, train_report.patches);
    assert_eq!(report.patch_accuracy, train_report.patch_accuracy);
    assert_eq!(report.patch_confusion, train_report.patch_confusion);

    let img = dir.path().join("small.png");
    save_gray_png(&img, &procedural_image::<f32>(64, 64, 3)).unwrap();
    let per_patch = dir.path().join("patches.csv");
    let o = run(&["score", "--model", s(&model), "--image", s(&img), "--per-patch", s(&per_patch)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let score: ScoreReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(score.patch_count, 1);
    assert!(score.grade.starts_with('c'));
    assert!((score.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(fs::read_to_string(&per_patch).unwrap().lines().count(), 2);

    let tiny = dir.path().join("tiny.png");
    save_gray_png(&tiny, &procedural_image::<f32>(63, 80, 3)).unwrap();
    assert_eq!(run(&["score", "--model", s(&model), "--image", s(&tiny)]).status.code(), Some(2));

    let mut bytes = fs::read(&model).unwrap();
    bytes[0] = b'Z';
    let bad = dir.path().join("bad.dqm");
    fs::write(&bad, bytes).unwrap();
    let o = run(&["score", "--model", s(&bad), "--image", s(&img)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad magic"));
}

#[test]
fn gradcheck_passes_and_names_every_group() {
    let o = run(&["gradcheck", "--max-per-group", "30"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = report["groups"].as_array().unwrap().iter().map(|g| g["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        [
            "conv1.kernels", "conv1.bias", "conv2.kernels", "conv2.bias", "conv3.kernels", "conv3.bias",
            "fc1.weights", "fc1.bias", "fc2.weights", "fc2.bias"
        ]
    );
}
