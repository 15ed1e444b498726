//! End-to-end runs of the command line through `cli::run`.

use std::fs;
use std::path::{Path, PathBuf};

use funcnet::cli::run;
use tempfile::TempDir;

/// A small, fast configuration: 60 samples on 25 points, short training.
const SMALL: &str = r#"
seed = 3

[data]
n = 60
m = 25

[model]
s_grid = 10
n_basis = 5

[train]
max_epochs = 25
patience = 5
"#;

struct Out {
    code: u8,
    stdout: String,
    stderr: String,
}

fn funcnet(args: &[&str]) -> Out {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = std::iter::once("funcnet").chain(args.iter().copied());
    let code = run(argv, &mut stdout, &mut stderr);
    Out {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn simulate_writes_the_default_dataset_reproducibly() {
    let a = funcnet(&["simulate", "--seed", "11"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    // One grid row plus 1500 samples.
    assert_eq!(a.stdout.lines().count(), 1501);
    assert!(a.stdout.starts_with("grid,"));
    assert_eq!(a.stdout.lines().next().unwrap().split(',').count(), 201);
    let b = funcnet(&["simulate", "--seed", "11"]);
    assert_eq!(a.stdout, b.stdout);
    let c = funcnet(&["simulate", "--seed", "12"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn usage_errors_exit_with_two() {
    let out = funcnet(&["simulate", "--scenario", "cubic"]);
    assert_eq!(out.code, 2);
    assert!(
        out.stderr.contains("cubic") && out.stderr.contains("linear"),
        "{}",
        out.stderr
    );

    let out = funcnet(&["benchmark", "--reps", "0"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("reps"), "{}", out.stderr);

    assert_eq!(funcnet(&["frobnicate"]).code, 2);
    assert_eq!(funcnet(&["fit"]).code, 2);
    assert_eq!(funcnet(&["--help"]).code, 0);
}

#[test]
fn missing_input_file_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.json");
    let out = funcnet(&["fit", "/definitely/not/here.csv", "--out", s(&model)]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("/definitely/not/here.csv"), "{}", out.stderr);
}

#[test]
fn bad_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = funcnet(&["simulate", "--config", s(&p)]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("learning_rate"), "{}", out.stderr);
}

#[test]
fn benchmark_writes_cells_and_aggregates() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("bench");
    let out = funcnet(&[
        "benchmark",
        "--config",
        s(&cfg),
        "--reps",
        "3",
        "--model",
        "flm,fdnn,fbnn",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let cells = fs::read_to_string(out_dir.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 9);
    assert!(cells.lines().skip(1).all(|l| l.contains(",ok,")));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(out_dir.join("summary.txt").exists());
    for m in ["flm", "fdnn", "fbnn"] {
        assert!(out.stdout.contains(m));
    }
}

#[test]
fn simulate_fit_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data.csv");
    let out = funcnet(&[
        "simulate",
        "--config",
        s(&cfg),
        "--scenario",
        "single-index",
        "--out",
        s(&data),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);

    for model in ["flm", "fdnn", "fbnn", "fnn", "mlp(8)"] {
        let model_path = dir.path().join("model.json");
        let fit = funcnet(&[
            "fit",
            s(&data),
            "--config",
            s(&cfg),
            "--model",
            model,
            "--out",
            s(&model_path),
        ]);
        assert_eq!(fit.code, 0, "{model}: {}", fit.stderr);
        let summary: serde_json::Value = serde_json::from_str(&fit.stdout).unwrap();
        assert_eq!(summary["model"], model);

        let pred = funcnet(&["predict", s(&model_path), s(&data)]);
        assert_eq!(pred.code, 0, "{model}: {}", pred.stderr);
        let mut lines = pred.stdout.lines();
        assert_eq!(lines.next(), Some("prediction"));
        let yhat: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(yhat.len(), 60);

        let y: Vec<f64> = fs::read_to_string(&data)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        let test: Vec<usize> = summary["split"]["test"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as usize)
            .collect();
        let rmse = (test.iter().map(|&i| (yhat[i] - y[i]).powi(2)).sum::<f64>() / test.len() as f64).sqrt();
        let reported = summary["test"]["rmse"].as_f64().unwrap();
        assert!((rmse - reported).abs() <= 1e-10, "{model}: {rmse} vs {reported}");
    }
}

#[test]
fn binary_predictions_carry_labels() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data.csv");
    assert_eq!(
        funcnet(&[
            "simulate",
            "--config",
            s(&cfg),
            "--scenario",
            "logistic",
            "--out",
            s(&data)
        ])
        .code,
        0
    );
    let model = dir.path().join("m.json");
    let fit = funcnet(&[
        "fit",
        s(&data),
        "--config",
        s(&cfg),
        "--model",
        "fbnn",
        "--out",
        s(&model),
    ]);
    assert_eq!(fit.code, 0, "{}", fit.stderr);
    let summary: serde_json::Value = serde_json::from_str(&fit.stdout).unwrap();
    assert_eq!(summary["response_kind"], "binary");
    assert!(summary["test"]["classification_error"].is_number());
    let pred = funcnet(&["predict", s(&model), s(&data)]);
    let mut lines = pred.stdout.lines();
    assert_eq!(lines.next(), Some("probability,label"));
    for l in lines {
        let (p, label) = l.split_once(',').unwrap();
        let p: f64 = p.parse().unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(label, if p >= 0.5 { "1" } else { "0" });
    }
}

#[test]
fn fdnn_rejects_curves_on_another_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let train = dir.path().join("train.csv");
    let other = dir.path().join("other.csv");
    assert_eq!(funcnet(&["simulate", "--config", s(&cfg), "--out", s(&train)]).code, 0);
    let other_cfg = dir.path().join("other.toml");
    fs::write(&other_cfg, SMALL.replace("m = 25", "m = 40")).unwrap();
    assert_eq!(
        funcnet(&["simulate", "--config", s(&other_cfg), "--out", s(&other)]).code,
        0
    );

    let fdnn = dir.path().join("fdnn.json");
    assert_eq!(
        funcnet(&[
            "fit",
            s(&train),
            "--config",
            s(&cfg),
            "--model",
            "fdnn",
            "--out",
            s(&fdnn)
        ])
        .code,
        0
    );
    let out = funcnet(&["predict", s(&fdnn), s(&other)]);
    assert_eq!(out.code, 1);
    assert!(
        out.stderr.contains("25 points") && out.stderr.contains("40 points"),
        "{}",
        out.stderr
    );

    // The basis network smooths the curves onto its own grid instead.
    let fbnn = dir.path().join("fbnn.json");
    assert_eq!(
        funcnet(&[
            "fit",
            s(&train),
            "--config",
            s(&cfg),
            "--model",
            "fbnn",
            "--out",
            s(&fbnn)
        ])
        .code,
        0
    );
    let out = funcnet(&["predict", s(&fbnn), s(&other)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout.lines().count(), 61);
}

#[test]
fn fit_without_out_is_a_usage_error() {
    let out = funcnet(&["fit", fixture("tecator.csv").to_str().unwrap()]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("--out"));
}

#[test]
fn fixtures_fit_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    for (name, m, kind) in [
        ("growth.csv", 31, "binary"),
        ("tecator.csv", 100, "continuous"),
        ("phoneme.csv", 150, "binary"),
    ] {
        let model = dir.path().join(format!("{name}.json"));
        let out = funcnet(&[
            "fit",
            fixture(name).to_str().unwrap(),
            "--config",
            s(&cfg),
            "--model",
            "fbnn",
            "--out",
            s(&model),
        ]);
        assert_eq!(out.code, 0, "{name}: {}", out.stderr);
        assert!(out.stderr.contains("mapped onto [0, 1]"), "{name}: {}", out.stderr);
        let summary: serde_json::Value = serde_json::from_str(&out.stdout).unwrap();
        assert_eq!(summary["grid_points"], m);
        assert_eq!(summary["response_kind"], kind);
    }
}
