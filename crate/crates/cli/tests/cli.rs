use std::path::Path;
use std::process::{Command, Output};

fn rcpmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcpmod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "hidden=12,4",
    "--set", "batch_size=64",
    "--set", "total_epochs=6",
    "--set", "warm_epochs=3",
    "--set", "impute_start=2",
    "--set", "knn_switch=3",
];

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&rcpmod(&["--help"])), 0);
    assert_eq!(code(&rcpmod(&["train", "--help"])), 0);
    assert_eq!(code(&rcpmod(&[])), 1);
    assert_eq!(code(&rcpmod(&["frobnicate"])), 1);
    assert_eq!(code(&rcpmod(&["mask", "--data", "x"])), 1);
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcpmod(&["train", "--set", "no_such_key=1", "--out", path(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = rcpmod(&["train", "--set", "warm_epochs=300", "--out", path(dir.path())]);
    assert_eq!(code(&out), 1);

    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "tau = -1\n").unwrap();
    assert_eq!(code(&rcpmod(&["train", "--config", path(&cfg), "--out", path(dir.path())])), 1);
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcpmod(&["eval", "--scores", path(&dir.path().join("absent.csv"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_reports_every_term() {
    let out = rcpmod(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| l.ends_with(" ok")));

    // an impossible tolerance is a numeric failure
    let out = rcpmod(&["gradcheck", "--seeds", "1", "--tolerance", "0"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn synth_inject_mask_train_score_eval() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let injected = dir.path().join("injected");
    let masked = dir.path().join("masked");
    let run = dir.path().join("run");
    let rescored = dir.path().join("rescored");

    let out = rcpmod(&["synth", "--set", "synth_n=150", "--set", "synth_dims=10,8", "--out", path(&clean)]);
    assert_eq!(code(&out), 0);
    assert!(clean.join("view_1.csv").is_file() && clean.join("view_2.csv").is_file());

    let out = rcpmod(&["inject", "--data", path(&clean), "--out", path(&injected), "--seed", "4"]);
    assert_eq!(code(&out), 0);
    let labels = std::fs::read_to_string(injected.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 150);
    assert!(labels.lines().filter(|l| l.trim() != "0").count() >= 15);

    let out = rcpmod(&["mask", "--data", path(&injected), "--out", path(&masked), "--rate", "0.2"]);
    assert_eq!(code(&out), 0);
    let mask = std::fs::read_to_string(masked.join("mask.csv")).unwrap();
    assert_eq!(mask.lines().filter(|l| l.contains('0')).count(), 30);

    let mut args = vec![
        "train",
        "--set", "rho1=0",
        "--set", "rho2=0",
        "--set", "rho3=0",
        "--set", "missing_rate=0",
        "--out", path(&run),
    ];
    let data = format!("data={}", path(&masked));
    args.extend(["--set", &data]);
    args.extend(SMALL);
    let out = rcpmod(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));

    let out = rcpmod(&[
        "score",
        "--checkpoint", path(&run.join("checkpoint.json")),
        "--data", path(&masked),
        "--out", path(&rescored),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(run.join("scores.csv")).unwrap(),
        std::fs::read_to_string(rescored.join("scores.csv")).unwrap()
    );

    let out = rcpmod(&["eval", "--scores", path(&rescored.join("scores.csv"))]);
    assert_eq!(code(&out), 0);
    let eval: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(eval["auc"].as_f64(), Some(auc));
    assert_eq!(eval["instances"].as_u64(), Some(150));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--key", "eta",
        "--values", "0.1,0.05",
        "--set", "synth_n=120",
        "--set", "synth_dims=8,8",
        "--out", path(dir.path()),
    ];
    args.extend(SMALL);
    let out = rcpmod(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eta,auc");
    assert!(lines[1].starts_with("0.05,") && lines[2].starts_with("0.1,"));
    assert!(dir.path().join("eta=0.1/metrics.json").is_file());
}
