use std::fs;

use ipl_core::prompt::TextEncoder;
use ipl_core::scheduler::{
    candidate_pool, evaluate, run, sweep, sweep_dir, write_run_outputs, Phase, RunConfig, SweepAxis, GAINS_FILE,
    METRICS_FILE, SELECTED_FILE, SUMMARY_FILE, SWEEP_FILE, TRACE_FILE,
};
use ipl_core::store::synth::{generate_world, SynthConfig};
use ipl_core::store::Store;
use ipl_core::Error;

fn store() -> Store {
    generate_world(&SynthConfig { dim: 32, distractors: 10, test_per_class: 6, ..SynthConfig::default() }, 3)
        .unwrap()
        .store
}

fn quick() -> RunConfig {
    RunConfig { k: 2, interval: 3, epochs: 10, n: 6, tau: 0.1, encoder: TextEncoder::Emphasis { gain: 2.0 }, ..RunConfig::default() }
}

#[test]
fn schedule_interleaves_then_refines() {
    let s = store();
    let cfg = quick();
    let r = run(&s, &candidate_pool(&s, &cfg), &cfg).unwrap();
    assert_eq!(r.trace.selection_epochs, vec![0, 3]);
    let phases: Vec<Phase> = r.trace.epoch_log.iter().map(|e| e.phase).collect();
    assert_eq!(phases.iter().filter(|p| **p == Phase::Interleaved).count(), 6);
    assert_eq!(phases.iter().filter(|p| **p == Phase::Refinement).count(), 4);
    assert_eq!(r.trace.layout, "[S1,S2,Sem1,S3,S4,Sem2,S5,S6,Class]");
    let chosen: Vec<&str> = r.trace.selection_steps.iter().map(|s| s.chosen.as_str()).collect();
    assert_ne!(chosen[0], chosen[1]);
}

#[test]
fn budget_shorter_than_interleaving_is_config_error() {
    let s = store();
    let cfg = RunConfig { k: 3, interval: 5, epochs: 14, ..quick() };
    assert!(matches!(run(&s, &candidate_pool(&s, &cfg), &cfg), Err(Error::Config(_))));
    let exact = RunConfig { epochs: 15, ..cfg };
    let r = run(&s, &candidate_pool(&s, &exact), &exact).unwrap();
    assert!(r.trace.epoch_log.iter().all(|e| e.phase == Phase::Interleaved));
}

#[test]
fn k_larger_than_pool_is_config_error() {
    let s = store();
    let cfg = RunConfig { k: 3, n: 6, ..quick() };
    let pool = candidate_pool(&s, &cfg).truncated(2);
    assert!(matches!(run(&s, &pool, &cfg), Err(Error::Config(_))));
}

#[test]
fn run_outputs_are_written() {
    let s = store();
    let cfg = quick();
    let r = run(&s, &candidate_pool(&s, &cfg), &cfg).unwrap();
    let m = evaluate(&r.state, &s).unwrap();
    assert!((0.0..=100.0).contains(&m.hm));
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &r, &m).unwrap();
    for f in [TRACE_FILE, METRICS_FILE, SELECTED_FILE, GAINS_FILE] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let selected = fs::read_to_string(dir.path().join(SELECTED_FILE)).unwrap();
    assert_eq!(selected.lines().count(), 2);
    let gains = fs::read_to_string(dir.path().join(GAINS_FILE)).unwrap();
    assert_eq!(gains.lines().count(), 3);
}

#[test]
fn sweep_writes_one_row_per_value_and_refuses_reuse() {
    let s = store();
    let cfg = RunConfig { workers: 2, ..quick() };
    let pool = candidate_pool(&s, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let summary = sweep(&s, &pool, &cfg, SweepAxis::K, &[0.0, 1.0, 2.0], &out).unwrap();
    assert_eq!(summary.rows.len(), 3);
    assert_eq!(summary.rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
    assert!(summary.rows.iter().any(|r| r.value == summary.recommended));
    for v in [0.0, 1.0, 2.0] {
        assert!(sweep_dir(&out, SweepAxis::K, v).join(TRACE_FILE).is_file());
    }
    let csv = fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join(SWEEP_FILE).is_file());

    assert!(matches!(sweep(&s, &pool, &cfg, SweepAxis::K, &[1.0], &out), Err(Error::Config(_))));
    let fresh = dir.path().join("again");
    assert!(matches!(sweep(&s, &pool, &cfg, SweepAxis::Lambda, &[0.1, 0.1], &fresh), Err(Error::Config(_))));
    assert!(matches!(sweep(&s, &pool, &cfg, SweepAxis::K, &[1.5], &fresh), Err(Error::Config(_))));
}

#[test]
fn sweep_rows_do_not_depend_on_worker_count() {
    let s = store();
    let pool = candidate_pool(&s, &quick());
    let dir = tempfile::tempdir().unwrap();
    let values = [0.0, 0.2];
    let a = sweep(&s, &pool, &RunConfig { workers: 1, ..quick() }, SweepAxis::Lambda, &values, &dir.path().join("a")).unwrap();
    let b = sweep(&s, &pool, &RunConfig { workers: 2, ..quick() }, SweepAxis::Lambda, &values, &dir.path().join("b")).unwrap();
    assert_eq!(a.rows, b.rows);
}
