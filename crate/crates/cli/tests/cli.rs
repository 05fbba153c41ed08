use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_solarbatt"));
    c.env_remove("SOLARBATT_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ausgrid_2013_sample.csv")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

/// Small networks and budgets so commands finish in a second or two.
const TINY: [&str; 8] = [
    "--set",
    "hyperparams.training_iterations=700",
    "--set",
    "hyperparams.actor_hiddens=[8, 8]",
    "--set",
    "hyperparams.critic_hiddens=[8, 8]",
    "--set",
    "data.synthetic.noise=0.2",
];

#[test]
fn missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--checkpoint", "/nonexistent/ckpt.json", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let line: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert!(line["message"].as_str().unwrap().contains("ckpt.json"));
}

#[test]
fn bad_config_key_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--set", "hyperparams.bogus=1", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let line: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(line["error"], "config");
    assert!(line["path"].as_str().unwrap().contains("hyperparams.bogus"), "{line}");

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[env]\ncapacity = -1.0\n").unwrap();
    let o = run(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("env.capacity"), "{}", stderr(&o));
}

#[test]
fn unknown_verb_is_rejected() {
    let o = run(&["frobnicate"]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_on_zero_week_costs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["oracle", "--out", p(dir.path())];
    for kv in [
        "data.synthetic.peak_solar=0.0",
        "data.synthetic.base_demand=0.0",
        "data.synthetic.morning_peak=0.0",
        "data.synthetic.evening_peak=0.0",
        "data.synthetic.controlled_load=0.0",
        "data.synthetic_weeks=2",
        "data.n_train=1",
    ] {
        args.extend(["--set", kv]);
    }
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    // Greedy still tops the empty battery up from the grid on the first night.
    for line in out.lines() {
        assert!(line.contains("no_battery_cost=0.00"), "{line}");
        assert!(line.ends_with("dp_cost=0.00"), "{line}");
    }
    assert!(out.lines().next().unwrap().contains("greedy_cost=0.10"));
    assert_eq!(rows(&dir.path().join("oracle.csv")).len(), 2);
    assert!(dir.path().join("oracle_settlements.csv").is_file());
}

#[test]
fn ingest_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ingest", "--input", p(&fixture()), "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("customer=1 records=5808 complete_weeks=15 split=8/7"), "{}", stdout(&o));
    let summary = rows(&dir.path().join("households.csv"));
    assert_eq!(summary.len(), 3);
    assert_eq!(&summary[1][2], "13");
    let split = rows(&dir.path().join("split.csv"));
    assert_eq!(split.len(), 15 + 13);
    for id in 1..=3 {
        assert!(dir.path().join(format!("households/{id}.csv")).is_file());
    }
    assert!(dir.path().join("manifest.toml").is_file());

    let o = run(&["ingest", "--input", "/nonexistent.csv", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let mut args = vec!["train", "--out", p(&train_dir)];
    args.extend(TINY);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "manifest.toml",
        "training_log.csv",
        "curve.csv",
        "checkpoint.json",
        "checkpoint_last.json",
        "result.json",
        "evaluation.csv",
        "settlements.csv",
    ] {
        assert!(train_dir.join(f).is_file(), "{f}");
    }
    assert_eq!(rows(&train_dir.join("evaluation.csv")).len(), 7);
    assert_eq!(rows(&train_dir.join("settlements.csv")).len(), 7 * 336);
    let mean: f64 = stdout(&o)
        .lines()
        .last()
        .and_then(|l| l.split("mean_reward=").nth(1))
        .unwrap()
        .parse()
        .unwrap();

    let eval_dir = dir.path().join("eval");
    let ckpt = train_dir.join("checkpoint.json");
    let mut args = vec!["eval", "--checkpoint", p(&ckpt), "--out", p(&eval_dir)];
    args.extend(TINY);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval_mean: f64 = stdout(&o).lines().last().unwrap()["mean_reward=".len()..].parse().unwrap();
    assert!((eval_mean - mean).abs() < 1e-4, "{eval_mean} vs {mean}");

    // A checkpoint for a different battery size is a shape error, not a crash.
    let mut args = vec!["eval", "--checkpoint", p(&ckpt), "--out", p(&eval_dir), "--set", "env.capacity=2.0"];
    args.extend(TINY);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn default_out_dir_comes_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["oracle", "--set", "data.synthetic_weeks=2", "--set", "data.n_train=1"])
        .env("SOLARBATT_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("oracle/oracle.csv").is_file());
}

#[test]
fn sweep_then_export_plots() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let mut args = vec!["sweep", "--out", p(&sweep), "--set", "hyperparams.training_iterations=400"];
    args.extend(&TINY[2..]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 10);

    let plots = dir.path().join("plots");
    let o = run(&["export-plots", "--run", p(&sweep), "--out", p(&plots)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let fig4 = rows(&plots.join("fig4_reward_by_size.csv"));
    assert_eq!(fig4.len(), 10);
    let sweep_rows = rows(&sweep.join("sweep.csv"));
    for (f, s) in fig4.iter().zip(&sweep_rows) {
        assert_eq!(&f[0], &s[0]);
        let oracle: f64 = f[2].parse().unwrap();
        let cost: f64 = s[2].parse().unwrap();
        assert_eq!(oracle, -cost);
    }

    let fig3 = rows(&plots.join("fig3_training_curves.csv"));
    assert_eq!(fig3.len(), rows(&sweep.join("curve.csv")).len());

    let fig5 = rows(&plots.join("fig5_daily_profile.csv"));
    for series in ["gc", "battery_charge", "discharge", "solar"] {
        assert_eq!(fig5.iter().filter(|r| &r[0] == series).count(), 48, "{series}");
    }
    // Recompute the mean and std of gc at 19:00 (slot 38) from the settlements.
    let settle = rows(&sweep.join("settlements.csv"));
    let gc: Vec<f64> = settle
        .iter()
        .filter(|r| r[1].ends_with("19:00:00"))
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert_eq!(gc.len(), 7 * 7);
    let mean = gc.iter().sum::<f64>() / gc.len() as f64;
    let std = (gc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gc.len() as f64).sqrt();
    let row = fig5.iter().find(|r| &r[0] == "gc" && &r[1] == "38").unwrap();
    assert!((row[2].parse::<f64>().unwrap() - mean).abs() < 1e-9);
    assert!((row[3].parse::<f64>().unwrap() - std).abs() < 1e-9);
}

#[test]
fn export_plots_lists_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sweep.csv"), "capacity\n").unwrap();
    let o = run(&["export-plots", "--run", p(dir.path()), "--out", p(&dir.path().join("plots"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("curve.csv") && err.contains("settlements.csv") && !err.contains("sweep.csv"), "{err}");
}
