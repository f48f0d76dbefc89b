use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ova(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ova-drift"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OVA_DRIFT_JOBS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--classes", "4", "--per-class", "40", "--seed", "1", "--out", "d"];
    args.extend_from_slice(extra);
    let o = ova(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn report(path: &Path, classes: usize, alpha_abs: f64) {
    let v = serde_json::json!({
        "classes": classes,
        "per_pair": [],
        "per_class": [],
        "alpha": -alpha_abs,
        "alpha_abs": alpha_abs,
        "skipped_pairs": []
    });
    fs::write(path, v.to_string()).unwrap();
}

#[test]
fn gen_data_writes_corpus_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(
        dir.path(),
        &["gen-data", "--classes", "5", "--per-class", "200", "--seed", "1", "--out", "d"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = dir.path().join("d");
    let classes = fs::read_dir(&d)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("class_"))
        .count();
    assert_eq!(classes, 5);
    let manifest = json(&d.join("manifest.json"));
    assert_eq!(manifest["classes"], 5);
    let digest = manifest["config_digest"].as_str().unwrap().to_string();
    let run = json(&d.join("run_manifest.json"));
    assert_eq!(run["command"], "gen-data");
    assert_eq!(run["config_digest"], digest.as_str());
    assert_eq!(run["seeds"], serde_json::json!([1]));
    let first = fs::read_to_string(d.join("class_0_m0.tsv")).unwrap();
    assert_eq!(first.lines().next().unwrap(), format!("# config_digest: {digest}"));
}

#[test]
fn gen_data_rejects_single_class_and_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(dir.path(), &["gen-data", "--classes", "1", "--out", "d"]);
    assert_eq!(code(&o), 2);
    fs::write(dir.path().join("blocker"), "").unwrap();
    let o = ova(dir.path(), &["gen-data", "--classes", "2", "--per-class", "10", "--out", "blocker/d"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("error"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ova(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&ova(dir.path(), &["gen-data"])), 2);
    assert_eq!(code(&ova(dir.path(), &["--jobs", "0", "gen-data", "--out", "d"])), 2);
    assert_eq!(code(&ova(dir.path(), &["--help"])), 0);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"classes": 3, "per_class": 30, "seed": 4}"#).unwrap();
    let o = ova(dir.path(), &["gen-data", "--config", "cfg.json", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("a/manifest.json"))["classes"], 3);
    let o = ova(dir.path(), &["gen-data", "--config", "cfg.json", "--classes", "2", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = json(&dir.path().join("b/run_manifest.json"));
    assert_eq!(run["config"]["classes"], 2);
    assert_eq!(run["config"]["per_class"], 30);

    fs::write(dir.path().join("bad.json"), r#"{"clases": 3}"#).unwrap();
    let o = ova(dir.path(), &["gen-data", "--config", "bad.json", "--out", "c"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn metric_on_synchronized_manifest_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--fraction", "1.0"]);
    let o = ova(dir.path(), &["metric", "--manifest", "d/manifest.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["alpha"], 0.0);
    assert_eq!(v["alpha_abs"], 0.0);
    assert_eq!(v["per_pair"].as_array().unwrap().len(), 12);
}

#[test]
fn metric_materialization_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let args = ["metric", "--manifest", "d/manifest.json", "--fraction", "0.5", "--seed", "3"];
    let a = ova(dir.path(), &args);
    let b = ova(dir.path(), &args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["alpha_abs"].as_f64().unwrap() > 0.0);
    let c = ova(dir.path(), &["metric", "--manifest", "d/manifest.json", "--fraction", "0.5", "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn metric_without_copies_or_flags_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let o = ova(dir.path(), &["metric", "--manifest", "d/manifest.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--fraction"));
}

#[test]
fn metric_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--fraction", "0.5"]);
    let o = ova(dir.path(), &["metric", "--manifest", "d/manifest.json", "--dimension", "8"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    fs::write(dir.path().join("emb.txt"), "c0w1 0.1 0.2 0.3\n").unwrap();
    let o = ova(dir.path(), &["metric", "--manifest", "d/manifest.json", "--embeddings", "emb.txt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn metric_with_only_skipped_copies_of_a_class_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(
        dir.path(),
        &["gen-data", "--classes", "3", "--per-class", "30", "--months", "4", "--launch", "2:3", "--staleness", "2", "--out", "d"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = ova(dir.path(), &["metric", "--manifest", "d/manifest.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("class 2"), "{}", stderr(&o));
    let o = ova(dir.path(), &["metric", "--manifest", "d/manifest.json", "--staleness", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let o = ova(
        dir.path(),
        &["train", "--manifest", "d/manifest.json", "--fraction", "0.5", "--seed", "2", "--out", "m"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let models = json(&dir.path().join("m/models.json"));
    assert_eq!(models["ova"]["models"].as_array().unwrap().len(), 4);
    assert_eq!(models["multiclass"]["classes"], 4);

    let o = ova(
        dir.path(),
        &["evaluate", "--manifest", "d/manifest.json", "--models", "m/models.json", "--out", "eval.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = json(&dir.path().join("eval.json"));
    let (a, b) = (e["ova"]["error_rate"].as_f64().unwrap(), e["multiclass"]["error_rate"].as_f64().unwrap());
    assert!((e["gap"].as_f64().unwrap() - (a - b)).abs() < 1e-12);
    assert_eq!(e["ova"]["n_total"], 16);
    assert!(dir.path().join("eval.run.json").exists());
}

#[test]
fn async_sweep_writes_seed_and_mean_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(
        dir.path(),
        &["sweep", "--kind", "async", "--grid", "1.0,0.7,0.3", "--seeds", "1,2,3", "--classes", "3", "--per-class", "40", "--out", "s"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("s/async.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap();
    assert!(header.starts_with("kind,sweep_value,seed"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some("mean")).count(), 3);

    let digest = json(&dir.path().join("s/run_manifest.json"))["config_digest"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(csv.starts_with(&format!("# config_digest: {digest}\n")));
    assert_eq!(json(&dir.path().join("s/async.json"))["config_digest"], digest.as_str());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("pearson"));
    assert!(stdout.contains("synchronized endpoint 1: alpha_abs = 0 (ok)"));
}

#[test]
fn class_sweep_plot_has_one_point_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(
        dir.path(),
        &["sweep", "--kind", "classes", "--grid", "2,4,8", "--seeds", "1", "--per-class", "30", "--out", "s"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for series in ["gap", "alpha_abs"] {
        let text = fs::read_to_string(dir.path().join(format!("s/classes_{series}.dat"))).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }
}

#[test]
fn staleness_sweep_writes_relative_gap_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(
        dir.path(),
        &["sweep", "--kind", "staleness", "--grid", "0,2", "--seeds", "1", "--classes", "3", "--per-class", "40", "--months", "3", "--out", "s"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("s/staleness_relative_gap.dat")).unwrap();
    assert!(text.contains("# staleness relative_gap"));
}

#[test]
fn invalid_sweep_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ova(dir.path(), &["sweep", "--kind", "async", "--grid", "1.0,1.5", "--out", "s"]);
    assert_eq!(code(&o), 2);
    let o = ova(dir.path(), &["sweep", "--kind", "async", "--grid", "0.3,0.5,0.4", "--out", "s"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn health_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    report(&p.join("one.json"), 3, 1.0);
    report(&p.join("one_and_half.json"), 3, 1.5);
    report(&p.join("four.json"), 4, 1.0);
    fs::write(p.join("bad.json"), "{not json").unwrap();

    let o = ova(p, &["health", "--baseline", "one.json", "--current", "one.json", "--threshold", "0.1"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["action"], "HEALTHY");

    let o = ova(
        p,
        &["health", "--baseline", "one.json", "--current", "one_and_half.json", "--threshold", "0.2", "--out", "v.json"],
    );
    assert_eq!(code(&o), 1);
    let v = json(&p.join("v.json"));
    assert_eq!(v["action"], "RESYNC_RECOMMENDED");
    assert!((v["relative_degradation"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    assert_eq!(code(&ova(p, &["health", "--baseline", "bad.json", "--current", "one.json"])), 2);
    assert_eq!(code(&ova(p, &["health", "--baseline", "one.json", "--current", "four.json"])), 2);
    assert_eq!(
        code(&ova(p, &["health", "--baseline", "one.json", "--current", "one.json", "--threshold", "0"])),
        2
    );
}

#[test]
fn metric_report_feeds_health() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let p = dir.path();
    for (name, f) in [("base.json", "1.0"), ("cur.json", "0.3")] {
        let o = ova(p, &["metric", "--manifest", "d/manifest.json", "--fraction", f, "--out", name]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let o = ova(p, &["health", "--baseline", "base.json", "--current", "cur.json", "--threshold", "0.2"]);
    assert_eq!(code(&o), 1);
    let o = ova(p, &["health", "--baseline", "cur.json", "--current", "cur.json"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn jobs_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ova-drift"))
        .args(["gen-data", "--classes", "2", "--per-class", "10", "--out", "d"])
        .current_dir(dir.path())
        .env("OVA_DRIFT_JOBS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
