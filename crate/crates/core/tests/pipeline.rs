use std::path::PathBuf;

use structprune::harness::commands::{self, REPORT, RETRAIN_METRICS, TRAIN_METRICS};
use structprune::harness::data_io::DataSpec;
use structprune::harness::{read_metrics, EpochRecord, ExperimentConfig};
use structprune::model::{self, TrainConfig};
use structprune::pipeline::{self, apply_mask, direct_baseline, retrain, GroupCut, Quiet};
use structprune::{Dataset, HyperParams, Model, SparsityMask};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DataSpec::Planted { features: 64, informative: 8, classes: 4, train: 512, test: 256 },
        train_epochs: 40,
        ..ExperimentConfig::default()
    };
    cfg.prune.lambda = 0.02;
    cfg.prune.rho = 0.1;
    cfg.prune.learning_rate = 1e-3;
    cfg.prune.iterations = 20;
    cfg.prune.retrain_epochs = 5;
    cfg
}

fn trained(cfg: &ExperimentConfig) -> (Model, Dataset, Dataset) {
    let (train, test) = commands::datasets(cfg).unwrap();
    let mut m = Model::new(cfg.input, &cfg.layers, cfg.init_seed()).unwrap();
    let tc = TrainConfig { epochs: 5, batch_size: 64, learning_rate: 3e-3, seed: 9 };
    model::train(&mut m, &train, &tc, |_, _| Ok(())).unwrap();
    (m, train, test)
}

#[test]
fn retraining_with_all_keep_mask_is_plain_training() {
    let cfg = small_config();
    let (m, train, _) = trained(&cfg);
    let hp = HyperParams { retrain_epochs: 3, learning_rate: 1e-3, batch_size: 32, seed: 4, ..cfg.prune.clone() };
    let masked = apply_mask(&m, &SparsityMask::all_keep(m.weights())).unwrap();
    let a = retrain(&masked, &train, &hp, |_, _| Ok(())).unwrap();
    let mut b = m.clone();
    let tc = TrainConfig { epochs: 3, batch_size: 32, learning_rate: 1e-3, seed: 4 };
    model::train(&mut b, &train, &tc, |_, _| Ok(())).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn retraining_requires_a_mask() {
    let cfg = small_config();
    let (m, train, _) = trained(&cfg);
    assert!(retrain(&m, &train, &cfg.prune, |_, _| Ok(())).is_err());
}

#[test]
fn unregularized_direct_run_keeps_everything() {
    let cfg = small_config();
    let (m, train, test) = trained(&cfg);
    let hp = HyperParams { lambda: 0.0, iterations: 2, retrain_epochs: 1, ..cfg.prune.clone() };
    let out = direct_baseline(&m, &train, &test, &hp, GroupCut::Epsilon(0.0), &mut Quiet).unwrap();
    assert!(out.mask.is_all_keep());
    assert_eq!(out.report.rate, 1.0);
    assert_eq!(out.report.pruning_epochs, 2);
    assert_eq!(out.report.retrain_epochs, 1);
}

#[test]
fn prune_and_retrain_respects_its_mask() {
    let cfg = small_config();
    let (m, train, test) = trained(&cfg);
    let out = pipeline::prune_and_retrain(&m, &train, &test, &cfg.prune, &mut Quiet).unwrap();
    assert_eq!(out.history.len(), cfg.prune.iterations);
    assert_eq!(out.mask.violations(out.retrained.weights()), 0);
    assert_eq!(out.retrained.mask(), Some(&out.mask));
    let r = &out.report;
    assert_eq!(r.layers.iter().map(|l| l.remaining).sum::<usize>(), r.remaining);
    assert!((r.rate - r.total as f64 / r.remaining as f64).abs() < 1e-12);
}

#[test]
fn baseline_fits_a_separable_problem() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/moons.cfg");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = commands::cmd_train(&cfg, dir.path()).unwrap();
    assert!(s.train_accuracy >= 0.99, "train accuracy {}", s.train_accuracy);
    let rows: Vec<EpochRecord> = read_metrics(&dir.path().join(TRAIN_METRICS)).unwrap();
    assert_eq!(rows.len(), cfg.train_epochs);
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=cfg.train_epochs).collect::<Vec<_>>());
}

#[test]
fn run_directory_round_trip() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    commands::cmd_train(&cfg, dir.path()).unwrap();
    let base = dir.path().join(commands::BASELINE_CKPT);
    let run = commands::cmd_prune(&cfg, &base, dir.path()).unwrap();
    assert_eq!(commands::RunReport::load(&dir.path().join(REPORT)).unwrap(), run);
    let retrain_rows: Vec<EpochRecord> = read_metrics(&dir.path().join(RETRAIN_METRICS)).unwrap();
    assert_eq!(retrain_rows.len(), cfg.prune.retrain_epochs);

    // a baseline trained under another configuration is refused
    let mut other = cfg.clone();
    other.train_epochs += 1;
    assert!(commands::cmd_prune(&other, &base, dir.path()).is_err());

    let missing = dir.path().join("nowhere");
    let t = commands::cmd_report(&[PathBuf::from(dir.path()), missing.clone()], None).unwrap();
    assert_eq!(t.summary.len(), 1);
    assert_eq!(t.errors.len(), 1);
    assert_eq!(t.errors[0].0, missing);
}
