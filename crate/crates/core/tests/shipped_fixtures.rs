//! Regression checks on the configurations under `configs/`.

use std::path::{Path, PathBuf};

use structprune::harness::commands::{self, BASELINE_CKPT, PRUNE_METRICS};
use structprune::harness::{read_metrics, ExperimentConfig};
use structprune::pruner::IterationMetrics;

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_fixture(name: &str) {
    let cfg = config(name);
    let dir = tempfile::tempdir().unwrap();
    commands::cmd_train(&cfg, dir.path()).unwrap();
    let run = commands::cmd_prune(&cfg, &dir.path().join(BASELINE_CKPT), dir.path()).unwrap();
    let history: Vec<IterationMetrics> = read_metrics(&dir.path().join(PRUNE_METRICS)).unwrap();
    assert_eq!(history.len(), cfg.prune.iterations);

    let tenth = (history.len() / 10).max(1);
    let head = median(history[..tenth].iter().map(|m| m.consensus_x).collect());
    let tail = median(history[history.len() - tenth..].iter().map(|m| m.consensus_x).collect());
    assert!(tail < head, "{name}: consensus median {head:.3e} at the start, {tail:.3e} at the end");

    let half = &history[history.len() / 2..];
    for pair in half.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for (i, (before, after)) in a.zero_rows.iter().zip(&b.zero_rows).enumerate() {
            assert!(after >= before, "{name}: zero rows of layer {i} fell from {before} to {after} at t = {}", b.t);
        }
        for (i, (before, after)) in a.zero_cols.iter().zip(&b.zero_cols).enumerate() {
            assert!(after >= before, "{name}: zero cols of layer {i} fell from {before} to {after} at t = {}", b.t);
        }
    }

    let r = &run.report;
    assert_eq!(r.layers.iter().map(|l| l.total).sum::<usize>(), r.total);
    assert_eq!(r.layers.iter().map(|l| l.remaining).sum::<usize>(), r.remaining);
    assert_eq!(r.remaining_series().len(), r.layers.len());
    assert!(r.rate >= 1.0);

    let tables = commands::cmd_report(&[PathBuf::from(dir.path())], None).unwrap();
    assert!(tables.errors.is_empty());
    assert_eq!(tables.summary.len(), 1);
    assert_eq!(tables.layers.len(), r.layers.len());
}

#[test]
fn planted_mlp() {
    check_fixture("planted_mlp.cfg");
}

#[test]
#[ignore = "CNN consensus gap has not settled by the last iteration and dense-layer columns are still revived, see README"]
fn planted_cnn() {
    check_fixture("planted_cnn.cfg");
}

#[test]
fn moons() {
    check_fixture("moons.cfg");
}
