use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ipl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipl")).args(args).env_remove("IPL_WORKERS").output().unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_SYNTH: &str = r#"{"dim": 24, "distractors": 8, "test_per_class": 4}"#;
const QUICK_RUN: &str = r#"{"k": 2, "t": 2, "T": 6, "n": 4, "tau": 0.1, "encoder": {"kind": "emphasis", "gain": 2.0}}"#;

fn synth(dir: &Path) -> String {
    let cfg = write(&dir.join("synth.json"), SMALL_SYNTH);
    let store = dir.join("store");
    let store = store.to_str().unwrap().to_string();
    let v = json_of(&ipl(&["--json", "--seed", "2", "synth", "--out", &store, "--config", &cfg]));
    assert_eq!(v["seed"], 2);
    assert_eq!(v["classes"], 10);
    store
}

#[test]
fn synth_run_diag_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth(tmp.path());
    let cfg = write(&tmp.path().join("run.json"), QUICK_RUN);
    let run_dir = tmp.path().join("run");
    let run_dir = run_dir.to_str().unwrap();

    let v = json_of(&ipl(&["--json", "run", "--store", &store, "--config", &cfg, "--out", run_dir]));
    assert_eq!(v["selected"].as_array().unwrap().len(), 2);
    let hm = v["metrics"]["hm"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&hm));

    let v = json_of(&ipl(&["--json", "diag", "--run", run_dir, "--store", &store, "--samples", "20", "--pool-limit", "6"]));
    assert_eq!(v["curve"]["gains"].as_array().unwrap().len(), 2);
    assert!(v["epsilon"].as_f64().unwrap() >= 0.0);
    assert!(Path::new(run_dir).join("diag.json").is_file());
    assert!(Path::new(run_dir).join("curve.csv").is_file());

    let v = json_of(&ipl(&["--json", "report", "--run", run_dir]));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["metrics"]["hm"].as_f64().unwrap(), hm);
    assert!(Path::new(run_dir).join("report.json").is_file());
}

#[test]
fn human_output_is_a_single_line_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth(tmp.path());
    let cfg = write(&tmp.path().join("run.json"), QUICK_RUN);
    let out = ipl(&["run", "--store", &store, "--config", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("base "), "{text}");
    assert!(serde_json::from_str::<Value>(&text).is_err());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth(tmp.path());
    let cfg = write(&tmp.path().join("bad.json"), r#"{"k": 1, "lamda": 0.2}"#);
    let out = ipl(&["run", "--store", &store, "--config", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_store_is_io_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ipl(&["run", "--store", tmp.path().join("nope").to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_compares_with_exhaustive_search() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth(tmp.path());
    let cfg = write(&tmp.path().join("run.json"), QUICK_RUN);
    let v = json_of(&ipl(&["--json", "oracle", "--store", &store, "--config", &cfg, "--k", "2", "--pool-limit", "8"]));
    let greedy = v["greedy_value"].as_f64().unwrap();
    let optimal = v["optimal_value"].as_f64().unwrap();
    assert!(greedy <= optimal + 1e-12);
    assert_eq!(v["optimal_words"].as_array().unwrap().len(), 2);
}

#[test]
fn filter_writes_pool_and_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let vocab = write(
        &tmp.path().join("vocab.tsv"),
        "word\ttoken_id\tzipf\tin_lexicon\tpiece_count\nstriped\t0\t4.0\t1\t1\nab\t1\t5.0\t1\t1\nrare\t2\t2.0\t1\t1\nDog\t3\t5.5\t1\t1\n",
    );
    let pool = tmp.path().join("pool.tsv");
    let v = json_of(&ipl(&["--json", "filter", "--vocab", &vocab, "--out", pool.to_str().unwrap()]));
    assert_eq!(v["kept"], 2);
    assert_eq!(v["length"], 1);
    assert_eq!(v["zipf"], 1);
    let text = fs::read_to_string(&pool).unwrap();
    assert!(text.contains("striped") && text.contains("dog"));
    assert!(tmp.path().join("rejections.json").is_file());
}

#[test]
fn workers_environment_variable_is_read_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth(tmp.path());
    let cfg = write(&tmp.path().join("run.json"), QUICK_RUN);
    let run = |workers: &str, dir: &str| {
        Command::new(env!("CARGO_BIN_EXE_ipl"))
            .args(["--json", "run", "--store", &store, "--config", &cfg, "--out", tmp.path().join(dir).to_str().unwrap()])
            .env("IPL_WORKERS", workers)
            .output()
            .unwrap()
    };
    let zero = run("0", "w0");
    assert_eq!(zero.status.code(), Some(2));
    let one = json_of(&run("1", "w1"));
    let three = json_of(&run("3", "w3"));
    assert_eq!(one["selected"], three["selected"]);
    assert_eq!(one["metrics"], three["metrics"]);
}

#[test]
fn sweep_reports_every_value() {
    let tmp = tempfile::tempdir().unwrap();
    let store = synth(tmp.path());
    let cfg = write(&tmp.path().join("run.json"), QUICK_RUN);
    let out = tmp.path().join("sweep");
    let v = json_of(&ipl(&[
        "--json", "sweep", "--store", &store, "--config", &cfg, "--out", out.to_str().unwrap(), "--axis", "lambda", "--values", "0,0.1,0.2",
    ]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert!(out.join("lambda=0.1").join("trace.json").is_file());
}
