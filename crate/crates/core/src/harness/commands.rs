//! The commands behind the `structprune` binary. Each one reads a config,
//! writes into a single run directory and returns what it wrote.
//!
//! Run directory contents:
//!
//! | file | written by |
//! |------|-----------|
//! | `config.txt`, `baseline.ckpt`, `train_metrics.jsonl` | `train` |
//! | `prune_config.txt`, `prune_metrics.jsonl`, `retrain_metrics.jsonl`, `pruned.ckpt`, `report.json` | `prune` |
//! | `direct_config.txt`, `direct_metrics.jsonl`, `direct_retrain_metrics.jsonl`, `direct.ckpt`, `direct_report.json` | `baseline-direct` |
//! | `gradcheck.json` | `gradient-check` |
//! | `summary.csv`, `layers.csv` | `report --out` |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::checkpoint::{Checkpoint, CheckpointMeta};
use crate::harness::config::{ExperimentConfig, MatchRate};
use crate::harness::data_io::load_dataset;
use crate::harness::metrics::{EpochRecord, MetricsWriter};
use crate::model::{self, gradient_check, Dataset, GradCheckConfig, GradCheckReport, Model, TrainConfig};
use crate::pipeline::{self, CompressionReport, GroupCut, Phase, PipelineObserver};
use crate::pruner::IterationMetrics;

pub const CONFIG_FILE: &str = "config.txt";
pub const BASELINE_CKPT: &str = "baseline.ckpt";
pub const TRAIN_METRICS: &str = "train_metrics.jsonl";
pub const PRUNE_CONFIG: &str = "prune_config.txt";
pub const PRUNE_METRICS: &str = "prune_metrics.jsonl";
pub const RETRAIN_METRICS: &str = "retrain_metrics.jsonl";
pub const PRUNED_CKPT: &str = "pruned.ckpt";
pub const REPORT: &str = "report.json";
pub const DIRECT_CONFIG: &str = "direct_config.txt";
pub const DIRECT_METRICS: &str = "direct_metrics.jsonl";
pub const DIRECT_RETRAIN_METRICS: &str = "direct_retrain_metrics.jsonl";
pub const DIRECT_CKPT: &str = "direct.ckpt";
pub const DIRECT_REPORT: &str = "direct_report.json";
pub const GRADCHECK: &str = "gradcheck.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const LAYERS_CSV: &str = "layers.csv";

/// Contents of `report.json` and `direct_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub base_hash: String,
    pub seed: u64,
    pub report: CompressionReport,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Train and test sets for `cfg`, checked against its model.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = load_dataset(&cfg.data, cfg.data_seed())?;
    if let Some(shape) = cfg.data_shape {
        train = train.reshaped(shape).map_err(|e| Error::Config(format!("data.shape: {e}")))?;
        test = test.reshaped(shape).map_err(|e| Error::Config(format!("data.shape: {e}")))?;
    }
    if train.sample_shape() != cfg.input || test.sample_shape() != cfg.input {
        return Err(Error::Config(format!(
            "data samples have shape {} but model.input is {}",
            train.sample_shape(),
            cfg.input
        )));
    }
    Ok((train, test))
}

fn fresh_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Model> {
    let model = Model::new(cfg.input, &cfg.layers, cfg.init_seed()).map_err(|e| Error::Config(e.to_string()))?;
    if model.classes() < data.classes() {
        return Err(Error::Config(format!(
            "model has {} outputs but the data has {} classes",
            model.classes(),
            data.classes()
        )));
    }
    Ok(model)
}

fn meta(cfg: &ExperimentConfig, stage: &str, epoch: usize) -> CheckpointMeta {
    CheckpointMeta {
        stage: stage.into(),
        seed: cfg.seed,
        epoch,
        config_hash: cfg.hash(),
        base_hash: cfg.base_hash(),
        input: String::new(),
        layers: Vec::new(),
        masked: false,
    }
}

fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.canonical())?;
    Ok(())
}

/// Trains the dense baseline and writes `baseline.ckpt`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let (train, test) = datasets(cfg)?;
    let mut model = fresh_model(cfg, &train)?;
    fs::create_dir_all(out)?;
    write_config(cfg, &out.join(CONFIG_FILE))?;
    let mut metrics = MetricsWriter::create(&out.join(TRAIN_METRICS), &cfg.hash())?;
    let tc = TrainConfig {
        epochs: cfg.train_epochs,
        batch_size: cfg.train_batch_size,
        learning_rate: cfg.train_learning_rate,
        seed: cfg.train_seed(),
    };
    model::train(&mut model, &train, &tc, |s, m| {
        metrics.write(&EpochRecord {
            phase: Phase::Train,
            epoch: s.epoch,
            loss: s.loss,
            test_accuracy: m.accuracy(&test)?,
        })
    })?;
    let ckpt = Checkpoint::new(meta(cfg, "baseline", cfg.train_epochs), model);
    ckpt.save(&out.join(BASELINE_CKPT))?;
    let stored = Checkpoint::rounded(&ckpt.model);
    Ok(TrainSummary {
        epochs: cfg.train_epochs,
        train_accuracy: stored.accuracy(&train)?,
        test_accuracy: stored.accuracy(&test)?,
    })
}

fn load_baseline(cfg: &ExperimentConfig, path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.meta.stage != "baseline" {
        return Err(Error::Config(format!(
            "{} is a `{}` checkpoint, not a baseline",
            path.display(),
            ckpt.meta.stage
        )));
    }
    if ckpt.meta.base_hash != cfg.base_hash() {
        return Err(Error::Config(format!(
            "{} was trained under a different model/data/train config (base hash {} != {})",
            path.display(),
            ckpt.meta.base_hash,
            cfg.base_hash()
        )));
    }
    Ok(ckpt.model)
}

/// Streams pipeline progress into metrics files.
struct FileObserver<'a> {
    iterations: Option<MetricsWriter>,
    epochs: Option<MetricsWriter>,
    retrain: MetricsWriter,
    test: &'a Dataset,
}

impl PipelineObserver for FileObserver<'_> {
    fn on_iteration(&mut self, m: &IterationMetrics) -> Result<()> {
        match &mut self.iterations {
            Some(w) => w.write(m),
            None => Ok(()),
        }
    }

    fn on_epoch(&mut self, phase: Phase, s: model::EpochStats, m: &Model) -> Result<()> {
        let rec = EpochRecord {
            phase,
            epoch: s.epoch,
            loss: s.loss,
            test_accuracy: m.accuracy(self.test)?,
        };
        match (phase, &mut self.epochs) {
            (Phase::Retrain, _) => self.retrain.write(&rec),
            (_, Some(w)) => w.write(&rec),
            (_, None) => Ok(()),
        }
    }
}

fn finish_report(
    cfg: &ExperimentConfig,
    mut report: CompressionReport,
    retrained: &Model,
    test: &Dataset,
) -> Result<RunReport> {
    // report what the checkpoint actually holds
    report.accuracy = Checkpoint::rounded(retrained).accuracy(test)?;
    Ok(RunReport {
        config_hash: cfg.hash(),
        base_hash: cfg.base_hash(),
        seed: cfg.seed,
        report,
    })
}

/// Primal-proximal pruning of `baseline`, then retraining. Writes
/// `pruned.ckpt`, `report.json` and the iteration and retrain metrics.
pub fn cmd_prune(cfg: &ExperimentConfig, baseline: &Path, out: &Path) -> Result<RunReport> {
    let model = load_baseline(cfg, baseline)?;
    let (train, test) = datasets(cfg)?;
    fs::create_dir_all(out)?;
    write_config(cfg, &out.join(PRUNE_CONFIG))?;
    let hash = cfg.hash();
    let mut obs = FileObserver {
        iterations: Some(MetricsWriter::create(&out.join(PRUNE_METRICS), &hash)?),
        epochs: None,
        retrain: MetricsWriter::create(&out.join(RETRAIN_METRICS), &hash)?,
        test: &test,
    };
    let outcome = pipeline::prune_and_retrain(&model, &train, &test, &cfg.prune, &mut obs)?;
    let ckpt = Checkpoint::new(meta(cfg, "pruned", outcome.report.retrain_epochs), outcome.retrained);
    ckpt.save(&out.join(PRUNED_CKPT))?;
    let run = finish_report(cfg, outcome.report, &ckpt.model, &test)?;
    run.save(&out.join(REPORT))?;
    Ok(run)
}

/// Direct-regularisation comparator. Writes `direct.ckpt`,
/// `direct_report.json` and its metrics.
pub fn cmd_baseline_direct(cfg: &ExperimentConfig, baseline: &Path, out: &Path) -> Result<RunReport> {
    let model = load_baseline(cfg, baseline)?;
    let (train, test) = datasets(cfg)?;
    let cut = match cfg.direct_match {
        MatchRate::None => GroupCut::Epsilon(cfg.prune.zero_epsilon),
        MatchRate::Rate(r) => GroupCut::MatchRate(r),
        MatchRate::Prune => {
            let path = out.join(REPORT);
            let run = RunReport::load(&path).map_err(|e| {
                Error::Config(format!("direct.match_rate = prune needs {}: {e}", path.display()))
            })?;
            GroupCut::MatchRate(run.report.rate)
        }
    };
    fs::create_dir_all(out)?;
    write_config(cfg, &out.join(DIRECT_CONFIG))?;
    let hash = cfg.hash();
    let mut obs = FileObserver {
        iterations: None,
        epochs: Some(MetricsWriter::create(&out.join(DIRECT_METRICS), &hash)?),
        retrain: MetricsWriter::create(&out.join(DIRECT_RETRAIN_METRICS), &hash)?,
        test: &test,
    };
    let outcome = pipeline::direct_baseline(&model, &train, &test, &cfg.direct_hyper_params(), cut, &mut obs)?;
    let ckpt = Checkpoint::new(meta(cfg, "direct", outcome.report.retrain_epochs), outcome.retrained);
    ckpt.save(&out.join(DIRECT_CKPT))?;
    let run = finish_report(cfg, outcome.report, &ckpt.model, &test)?;
    run.save(&out.join(DIRECT_REPORT))?;
    Ok(run)
}

/// One row of the consolidated table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub method: String,
    pub base_accuracy: Option<f64>,
    pub pruned_accuracy: Option<f64>,
    pub retrained_accuracy: f64,
    pub compression_rate: f64,
    pub total: usize,
    pub remaining: usize,
    pub pruning_epochs: usize,
    pub retrain_epochs: usize,
    pub epochs_used: usize,
}

/// Remaining-parameter series for plotting, one row per layer per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub run: String,
    pub method: String,
    pub layer: String,
    pub total: usize,
    pub remaining: usize,
    pub kept_rows: usize,
    pub kept_cols: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportTables {
    pub summary: Vec<SummaryRow>,
    pub layers: Vec<LayerRow>,
    /// Run directories that could not be read, with the reason.
    pub errors: Vec<(PathBuf, String)>,
}

impl ReportTables {
    pub fn write_summary_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for r in &self.summary {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_layers_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for r in &self.layers {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Collects `report.json` and `direct_report.json` from each run directory.
/// Unreadable directories are listed in `errors` and skipped.
pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> Result<ReportTables> {
    let mut t = ReportTables::default();
    for dir in runs {
        let name = dir.display().to_string();
        let mut found = false;
        for file in [REPORT, DIRECT_REPORT] {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            found = true;
            match RunReport::load(&path) {
                Ok(run) => {
                    let r = &run.report;
                    t.summary.push(SummaryRow {
                        run: name.clone(),
                        method: r.method.clone(),
                        base_accuracy: r.base_accuracy,
                        pruned_accuracy: r.pruned_accuracy,
                        retrained_accuracy: r.accuracy,
                        compression_rate: r.rate,
                        total: r.total,
                        remaining: r.remaining,
                        pruning_epochs: r.pruning_epochs,
                        retrain_epochs: r.retrain_epochs,
                        epochs_used: r.pruning_epochs + r.retrain_epochs,
                    });
                    t.layers.extend(r.layers.iter().map(|l| LayerRow {
                        run: name.clone(),
                        method: r.method.clone(),
                        layer: l.id.clone(),
                        total: l.total,
                        remaining: l.remaining,
                        kept_rows: l.kept_rows,
                        kept_cols: l.kept_cols,
                        rate: l.rate,
                    }));
                }
                Err(e) => t.errors.push((path, e.to_string())),
            }
        }
        if !found {
            t.errors.push((dir.clone(), format!("no {REPORT} or {DIRECT_REPORT}")));
        }
    }
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        t.write_summary_csv(fs::File::create(out.join(SUMMARY_CSV))?)?;
        t.write_layers_csv(fs::File::create(out.join(LAYERS_CSV))?)?;
    }
    Ok(t)
}

/// Finite-difference check of the configured model's gradients on the
/// first (up to) 64 training examples.
pub fn cmd_gradient_check(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<GradCheckReport> {
    let (train, _) = datasets(cfg)?;
    let model = fresh_model(cfg, &train)?;
    let batch: Vec<usize> = (0..train.len().min(64)).collect();
    let report = gradient_check(
        &model,
        &train,
        &batch,
        &GradCheckConfig {
            seed: cfg.seed,
            ..GradCheckConfig::default()
        },
    )?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(out.join(GRADCHECK), text)?;
    }
    Ok(report)
}
