//! From a converged pruner state to a pruned, retrained model and its
//! compression accounting. Also hosts the direct-regularisation baseline
//! used as a comparator.
//!
//! A weight survives iff its row survives in `X` and its column survives in
//! `Y`, so a pruned layer is still a dense `kept_rows x kept_cols` GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ActShape, Dataset, EpochStats, LayerSpec, Model, Params, TrainConfig};
use crate::pruner::{self, HyperParams, IterationMetrics, PrunerState};
use crate::tensor::{col_l2_norms, row_l2_norms, Matrix, WeightCollection};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub id: String,
    pub row_keep: Vec<bool>,
    pub col_keep: Vec<bool>,
}

impl LayerMask {
    pub fn all_keep(id: &str, rows: usize, cols: usize) -> Self {
        LayerMask {
            id: id.to_string(),
            row_keep: vec![true; rows],
            col_keep: vec![true; cols],
        }
    }

    #[inline]
    pub fn keeps(&self, p: usize, q: usize) -> bool {
        self.row_keep[p] && self.col_keep[q]
    }

    pub fn kept_rows(&self) -> usize {
        self.row_keep.iter().filter(|&&k| k).count()
    }

    pub fn kept_cols(&self) -> usize {
        self.col_keep.iter().filter(|&&k| k).count()
    }

    pub fn remaining(&self) -> usize {
        self.kept_rows() * self.kept_cols()
    }

    /// 0/1 element mask.
    pub fn element_mask(&self) -> Matrix {
        Matrix::from_fn(self.row_keep.len(), self.col_keep.len(), |p, q| {
            if self.keeps(p, q) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Per-layer row-keep and column-keep vectors. The element mask is always
/// derived, never stored, so it cannot drift from the two vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    pub layers: Vec<LayerMask>,
}

impl SparsityMask {
    pub fn all_keep(weights: &WeightCollection) -> Self {
        SparsityMask {
            layers: weights
                .iter()
                .map(|(id, m)| LayerMask::all_keep(id, m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn is_all_keep(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.row_keep.iter().chain(&l.col_keep).all(|&k| k))
    }

    pub fn ensure_matches(&self, weights: &WeightCollection) -> Result<()> {
        if self.layers.len() != weights.len() {
            return Err(Error::shape(
                format!("mask for {} layers", weights.len()),
                self.layers.len(),
            ));
        }
        for (l, (id, m)) in self.layers.iter().zip(weights.iter()) {
            if l.id != id || l.row_keep.len() != m.rows() || l.col_keep.len() != m.cols() {
                return Err(Error::shape(
                    format!("`{id}` {}x{}", m.rows(), m.cols()),
                    format!("`{}` {}x{}", l.id, l.row_keep.len(), l.col_keep.len()),
                ));
            }
        }
        Ok(())
    }

    /// Zeroes masked weights and the biases of dropped rows.
    pub fn apply_to_params(&self, params: &mut Params) {
        for (i, l) in self.layers.iter().enumerate() {
            let m = params.weights.matrix_mut(i);
            for p in 0..m.rows() {
                let row = m.row_mut(p);
                if !l.row_keep[p] {
                    row.fill(0.0);
                    continue;
                }
                for (v, &k) in row.iter_mut().zip(&l.col_keep) {
                    if !k {
                        *v = 0.0;
                    }
                }
            }
            for (b, &k) in params.biases[i].iter_mut().zip(&l.row_keep) {
                if !k {
                    *b = 0.0;
                }
            }
        }
    }

    /// Masked weights that are not exactly zero.
    pub fn violations(&self, weights: &WeightCollection) -> usize {
        self.layers
            .iter()
            .zip(weights.matrices())
            .map(|(l, m)| {
                (0..m.rows())
                    .flat_map(|p| (0..m.cols()).map(move |q| (p, q)))
                    .filter(|&(p, q)| !l.keeps(p, q) && m.get(p, q) != 0.0)
                    .count()
            })
            .sum()
    }
}

fn group_survives(norm: f64, epsilon: f64, layer_norm: f64) -> bool {
    norm > epsilon * (1.0 + layer_norm)
}

/// Row `p` of layer `i` is dropped iff `|row_source_i[p,:]| <= ε (1 + |row_source_i|_F)`;
/// columns likewise against `col_source`.
pub fn mask_from_groups(
    row_source: &WeightCollection,
    col_source: &WeightCollection,
    epsilon: f64,
) -> Result<SparsityMask> {
    row_source.ensure_same_structure(col_source)?;
    let layers = row_source
        .iter()
        .zip(col_source.matrices())
        .map(|((id, xr), yc)| {
            let (nx, ny) = (xr.frobenius_norm(), yc.frobenius_norm());
            LayerMask {
                id: id.to_string(),
                row_keep: row_l2_norms(xr)
                    .into_iter()
                    .map(|n| group_survives(n, epsilon, nx))
                    .collect(),
                col_keep: col_l2_norms(yc)
                    .into_iter()
                    .map(|n| group_survives(n, epsilon, ny))
                    .collect(),
            }
        })
        .collect();
    Ok(SparsityMask { layers })
}

/// Rows from `X`, columns from `Y`. At `ε = 0` exactly the proximal step's
/// hard zeros are removed.
pub fn extract_mask<O: model::Objective>(state: &PrunerState<O>, epsilon: f64) -> Result<SparsityMask> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    mask_from_groups(&state.x, &state.y, epsilon)
}

/// Zeroes every masked weight (and the biases of dropped rows) and attaches
/// the mask to the model. Kept weights are untouched.
pub fn apply_mask(model: &Model, mask: &SparsityMask) -> Result<Model> {
    mask.ensure_matches(model.weights())?;
    for l in &mask.layers {
        if l.kept_rows() == 0 {
            return Err(Error::EmptyLayer {
                layer: l.id.clone(),
                axis: "rows",
            });
        }
        if l.kept_cols() == 0 {
            return Err(Error::EmptyLayer {
                layer: l.id.clone(),
                axis: "columns",
            });
        }
    }
    let mut pruned = model.clone();
    pruned.set_mask(Some(mask.clone()));
    pruned.enforce_mask();
    Ok(pruned)
}

/// Fine-tunes the surviving weights. Masked weights receive no gradient and
/// are verified to be exactly zero after every epoch.
pub fn retrain(
    model: &Model,
    data: &Dataset,
    hp: &HyperParams,
    mut on_epoch: impl FnMut(EpochStats, &Model) -> Result<()>,
) -> Result<Model> {
    let mask = model
        .mask()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("retraining requires a masked model".into()))?;
    let mut m = model.clone();
    let cfg = TrainConfig {
        epochs: hp.retrain_epochs,
        batch_size: hp.batch_size,
        learning_rate: hp.learning_rate,
        seed: hp.seed,
    };
    model::train(&mut m, data, &cfg, |stats, current| {
        let bad = mask.violations(current.weights());
        if bad != 0 {
            return Err(Error::InvalidArgument(format!(
                "{bad} masked weights became non-zero in retrain epoch {}",
                stats.epoch
            )));
        }
        on_epoch(stats, current)
    })?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub kept_rows: usize,
    pub kept_cols: usize,
    pub total: usize,
    pub remaining: usize,
    pub rate: f64,
    /// Kept input columns fed only by rows the previous layer dropped. Not
    /// pruned automatically.
    pub dead_inputs_kept: usize,
}

/// Per-layer and overall parameter counts. Remaining parameters of a layer
/// are `kept_rows * kept_cols`; the overall rate is total over remaining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub method: String,
    pub layers: Vec<LayerReport>,
    pub total: usize,
    pub remaining: usize,
    pub rate: f64,
    pub base_accuracy: Option<f64>,
    pub pruned_accuracy: Option<f64>,
    /// Accuracy of the reported model on the evaluation data.
    pub accuracy: f64,
    pub pruning_epochs: usize,
    pub retrain_epochs: usize,
    pub diagnostics: Vec<String>,
}

impl CompressionReport {
    /// Remaining parameters per layer, in layer order.
    pub fn remaining_series(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.remaining).collect()
    }
}

/// Maps column `q` of a prunable layer to the row of the previous prunable
/// layer that feeds it, when the wiring is a plain chain.
fn upstream_row(spec: &LayerSpec, input: ActShape, prev_rows: usize, q: usize) -> Option<usize> {
    match (*spec, input) {
        (LayerSpec::Conv2d { kernel_h, kernel_w, .. }, ActShape::Spatial { channels, .. })
            if channels == prev_rows =>
        {
            Some(q / (kernel_h * kernel_w))
        }
        (LayerSpec::Dense { .. }, ActShape::Flat(n)) if prev_rows > 0 && n % prev_rows == 0 => {
            Some(q / (n / prev_rows))
        }
        _ => None,
    }
}

pub fn compression_report(model: &Model, mask: &SparsityMask, eval: &Dataset) -> Result<CompressionReport> {
    mask.ensure_matches(model.weights())?;
    let inputs = model.prunable_inputs();
    let mut layers = Vec::with_capacity(mask.layers.len());
    let mut diagnostics = Vec::new();
    for (i, l) in mask.layers.iter().enumerate() {
        let (rows, cols) = (l.row_keep.len(), l.col_keep.len());
        let remaining = l.remaining();
        if remaining == 0 {
            return Err(Error::EmptyLayer {
                layer: l.id.clone(),
                axis: if l.kept_rows() == 0 { "rows" } else { "columns" },
            });
        }
        let mut dead_inputs_kept = 0;
        if i > 0 {
            let prev = &mask.layers[i - 1];
            let (spec, input) = inputs[i];
            for q in 0..cols {
                if l.col_keep[q]
                    && upstream_row(&spec, input, prev.row_keep.len(), q).is_some_and(|p| !prev.row_keep[p])
                {
                    dead_inputs_kept += 1;
                }
            }
            if dead_inputs_kept > 0 {
                diagnostics.push(format!(
                    "{}: {dead_inputs_kept} kept columns read rows dropped in {}",
                    l.id, prev.id
                ));
            }
        }
        layers.push(LayerReport {
            id: l.id.clone(),
            rows,
            cols,
            kept_rows: l.kept_rows(),
            kept_cols: l.kept_cols(),
            total: rows * cols,
            remaining,
            rate: (rows * cols) as f64 / remaining as f64,
            dead_inputs_kept,
        });
    }
    let total: usize = layers.iter().map(|l| l.total).sum();
    let remaining: usize = layers.iter().map(|l| l.remaining).sum();
    Ok(CompressionReport {
        method: String::new(),
        layers,
        total,
        remaining,
        rate: total as f64 / remaining as f64,
        base_accuracy: None,
        pruned_accuracy: None,
        accuracy: model.accuracy(eval)?,
        pruning_epochs: 0,
        retrain_epochs: 0,
        diagnostics,
    })
}

/// A pruned layer after physical removal of dropped rows and columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactLayer {
    pub id: String,
    /// Original indices of the kept rows / columns.
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub full_shape: (usize, usize),
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl CompactLayer {
    pub fn from_masked(id: &str, w: &Matrix, bias: &[f64], mask: &LayerMask) -> Self {
        let rows: Vec<usize> = (0..w.rows()).filter(|&p| mask.row_keep[p]).collect();
        let cols: Vec<usize> = (0..w.cols()).filter(|&q| mask.col_keep[q]).collect();
        let weights = Matrix::from_fn(rows.len(), cols.len(), |r, c| w.get(rows[r], cols[c]));
        CompactLayer {
            id: id.to_string(),
            bias: rows.iter().map(|&p| bias[p]).collect(),
            full_shape: w.shape(),
            rows,
            cols,
            weights,
        }
    }

    /// `(kept rows x kept cols) * input[cols]`, scattered back to the full
    /// row count with zeros for dropped rows. `input` is `full_cols x k`.
    fn apply(&self, input: &Matrix) -> Matrix {
        let gathered = Matrix::from_fn(self.cols.len(), input.cols(), |c, j| input.get(self.cols[c], j));
        let y = self.weights.matmul(&gathered).expect("compact shapes agree");
        let mut out = Matrix::zeros(self.full_shape.0, input.cols());
        for (r, &p) in self.rows.iter().enumerate() {
            for (o, v) in out.row_mut(p).iter_mut().zip(y.row(r)) {
                *o = v + self.bias[r];
            }
        }
        out
    }
}

/// Inference-only model holding only surviving weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactModel {
    input: ActShape,
    specs: Vec<LayerSpec>,
    layers: Vec<CompactLayer>,
}

impl CompactModel {
    pub fn from_model(model: &Model) -> Self {
        let all_keep;
        let mask = match model.mask() {
            Some(m) => m,
            None => {
                all_keep = SparsityMask::all_keep(model.weights());
                &all_keep
            }
        };
        let layers = mask
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                CompactLayer::from_masked(&l.id, model.weights().matrix(i), &model.params().biases[i], l)
            })
            .collect();
        CompactModel {
            input: model.input_shape(),
            specs: model.specs(),
            layers,
        }
    }

    pub fn layers(&self) -> &[CompactLayer] {
        &self.layers
    }

    pub fn stored_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input.len() {
            return Err(Error::shape(self.input, x.len()));
        }
        let mut act = x.to_vec();
        let mut shape = self.input;
        let mut next_layer = 0;
        for spec in &self.specs {
            let out_shape = spec.output_shape(shape)?;
            act = match spec {
                LayerSpec::Dense { .. } => {
                    let l = &self.layers[next_layer];
                    next_layer += 1;
                    let n = act.len();
                    l.apply(&Matrix::from_vec(n, 1, act)?).into_vec()
                }
                LayerSpec::Conv2d { .. } => {
                    let l = &self.layers[next_layer];
                    next_layer += 1;
                    let g = spec.geometry(shape).expect("conv geometry");
                    l.apply(&model::conv::im2col(&act, &g)).into_vec()
                }
                LayerSpec::Relu => act.into_iter().map(|v| v.max(0.0)).collect(),
                LayerSpec::Flatten | LayerSpec::SoftmaxCrossEntropy => act,
            };
            shape = out_shape;
        }
        Ok(act)
    }
}

/// Which stage of a pipeline an epoch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Regularized,
    Retrain,
}

/// Progress sink for the end-to-end pipelines.
pub trait PipelineObserver {
    fn on_iteration(&mut self, _metrics: &IterationMetrics) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _phase: Phase, _stats: EpochStats, _model: &Model) -> Result<()> {
        Ok(())
    }
}

/// Observer that records nothing.
pub struct Quiet;

impl PipelineObserver for Quiet {}

pub struct PruneOutcome {
    pub state: PrunerState<Model>,
    pub history: Vec<IterationMetrics>,
    pub mask: SparsityMask,
    pub pruned: Model,
    pub retrained: Model,
    pub report: CompressionReport,
}

/// Primal-proximal iterations, mask extraction, hard pruning, retraining and
/// reporting, in one pass. Uses exactly `iterations * primal_epochs` pruning
/// epochs and `retrain_epochs` retraining epochs.
pub fn prune_and_retrain(
    baseline: &Model,
    train: &Dataset,
    test: &Dataset,
    hp: &HyperParams,
    observer: &mut impl PipelineObserver,
) -> Result<PruneOutcome> {
    let base_accuracy = baseline.accuracy(test)?;
    let (state, history) = pruner::run(baseline, train, hp, &mut |m: &IterationMetrics, _: &PrunerState<Model>| {
        observer.on_iteration(m)
    })?;
    let mask = extract_mask(&state, hp.zero_epsilon)?;
    let pruned = apply_mask(&state.w, &mask)?;
    let pruned_accuracy = pruned.accuracy(test)?;
    let mut retrain_epochs = 0;
    let retrained = retrain(&pruned, train, hp, |stats, m| {
        retrain_epochs += 1;
        observer.on_epoch(Phase::Retrain, stats, m)
    })?;
    let mut report = compression_report(&retrained, &mask, test)?;
    report.method = "primal-proximal".into();
    report.base_accuracy = Some(base_accuracy);
    report.pruned_accuracy = Some(pruned_accuracy);
    report.pruning_epochs = history.len() * hp.primal_epochs;
    report.retrain_epochs = retrain_epochs;
    Ok(PruneOutcome {
        state,
        history,
        mask,
        pruned,
        retrained,
        report,
    })
}

/// How the direct baseline decides which groups to remove.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupCut {
    /// The same relative-ε rule as [`extract_mask`], applied to `W`.
    Epsilon(f64),
    /// Smallest ε whose mask reaches at least this compression rate.
    MatchRate(f64),
}

fn mask_rate(mask: &SparsityMask) -> f64 {
    let total: usize = mask.layers.iter().map(|l| l.row_keep.len() * l.col_keep.len()).sum();
    let remaining: usize = mask.layers.iter().map(LayerMask::remaining).sum();
    if mask.layers.iter().any(|l| l.remaining() == 0) {
        return f64::INFINITY;
    }
    total as f64 / remaining as f64
}

/// Bisects on ε for the smallest value whose mask on `weights` reaches
/// `target` compression.
pub fn epsilon_for_rate(weights: &WeightCollection, target: f64) -> Result<f64> {
    let rate_at = |eps: f64| mask_from_groups(weights, weights, eps).map(|m| mask_rate(&m));
    if rate_at(0.0)? >= target {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while rate_at(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidArgument(format!("compression {target} unreachable")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rate_at(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Gradient of `λ Σ (row norms + column norms)` with zero-norm groups
/// contributing zero.
pub fn group_penalty_subgradient(w: &WeightCollection, lambda: f64) -> WeightCollection {
    w.map(|_, m| {
        let rn = row_l2_norms(m);
        let cn = col_l2_norms(m);
        Matrix::from_fn(m.rows(), m.cols(), |p, q| {
            let v = m.get(p, q);
            let mut g = 0.0;
            if rn[p] > 0.0 {
                g += v / rn[p];
            }
            if cn[q] > 0.0 {
                g += v / cn[q];
            }
            lambda * g
        })
    })
}

pub struct DirectOutcome {
    pub regularized: Model,
    pub mask: SparsityMask,
    pub epsilon: f64,
    pub pruned: Model,
    pub retrained: Model,
    pub report: CompressionReport,
}

/// Comparator: train on `loss + λ·penalty` directly for the same number of
/// epochs the primal-proximal run would use, cut groups, then retrain
/// exactly like the main path.
pub fn direct_baseline(
    pretrained: &Model,
    train: &Dataset,
    test: &Dataset,
    hp: &HyperParams,
    cut: GroupCut,
    observer: &mut impl PipelineObserver,
) -> Result<DirectOutcome> {
    hp.validate()?;
    let base_accuracy = pretrained.accuracy(test)?;
    let mut model = pretrained.clone();
    model.set_mask(None);
    let mut opt = model::OptimState::adam(hp.learning_rate);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(hp.seed);
    let epochs = hp.iterations * hp.primal_epochs;
    for epoch in 1..=epochs {
        let loss = model::run_epoch(&mut model, train, &mut opt, hp.batch_size, &mut rng, |params, grad| {
            grad.weights
                .axpy(1.0, &group_penalty_subgradient(&params.weights, hp.lambda))
        })?;
        observer.on_epoch(Phase::Regularized, EpochStats { epoch, loss }, &model)?;
    }
    let epsilon = match cut {
        GroupCut::Epsilon(e) => e,
        GroupCut::MatchRate(r) => epsilon_for_rate(model.weights(), r)?,
    };
    let mask = mask_from_groups(model.weights(), model.weights(), epsilon)?;
    let pruned = apply_mask(&model, &mask)?;
    let pruned_accuracy = pruned.accuracy(test)?;
    let mut retrain_epochs = 0;
    let retrained = retrain(&pruned, train, hp, |stats, m| {
        retrain_epochs += 1;
        observer.on_epoch(Phase::Retrain, stats, m)
    })?;
    let mut report = compression_report(&retrained, &mask, test)?;
    report.method = "direct".into();
    report.base_accuracy = Some(base_accuracy);
    report.pruned_accuracy = Some(pruned_accuracy);
    report.pruning_epochs = epochs;
    report.retrain_epochs = retrain_epochs;
    Ok(DirectOutcome {
        regularized: model,
        mask,
        epsilon,
        pruned,
        retrained,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;

    fn mlp(inputs: usize, hidden: usize, classes: usize) -> Model {
        Model::new(
            ActShape::Flat(inputs),
            &[
                LayerSpec::Dense { inputs, outputs: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: hidden, outputs: classes },
            ],
            3,
        )
        .unwrap()
    }

    fn toy_data(model: &Model, n: usize) -> Dataset {
        let d = model.input_shape().len();
        let inputs: Vec<f64> = (0..n * d).map(|i| ((i * 31 % 17) as f64 - 8.0) / 8.0).collect();
        let labels = (0..n).map(|i| i % model.classes()).collect();
        Dataset::new(ActShape::Flat(d), model.classes(), Split::Test, inputs, labels).unwrap()
    }

    fn drop(mask: &mut SparsityMask, layer: usize, rows: &[usize], cols: &[usize]) {
        for &p in rows {
            mask.layers[layer].row_keep[p] = false;
        }
        for &q in cols {
            mask.layers[layer].col_keep[q] = false;
        }
    }

    #[test]
    fn all_keep_mask_is_identity() {
        let model = mlp(5, 4, 3);
        let mask = SparsityMask::all_keep(model.weights());
        let pruned = apply_mask(&model, &mask).unwrap();
        assert_eq!(pruned.params(), model.params());
        let data = toy_data(&model, 6);
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(pruned.forward(&data, &all).unwrap(), model.forward(&data, &all).unwrap());
        let report = compression_report(&pruned, &mask, &data).unwrap();
        assert_eq!(report.rate, 1.0);
    }

    #[test]
    fn masked_entries_zero_and_kept_entries_bit_identical() {
        let model = mlp(6, 4, 3);
        let mut mask = SparsityMask::all_keep(model.weights());
        drop(&mut mask, 0, &[1], &[0, 5]);
        let pruned = apply_mask(&model, &mask).unwrap();
        let (a, b) = (model.weights().matrix(0), pruned.weights().matrix(0));
        for p in 0..4 {
            for q in 0..6 {
                if mask.layers[0].keeps(p, q) {
                    assert_eq!(a.get(p, q).to_bits(), b.get(p, q).to_bits());
                } else {
                    assert_eq!(b.get(p, q), 0.0);
                }
            }
        }
        assert_eq!(pruned.params().biases[0][1], 0.0);
        assert_eq!(mask.violations(pruned.weights()), 0);
        assert_eq!(pruned.mask(), Some(&mask));
        let em = mask.layers[0].element_mask();
        assert_eq!(em.as_slice().iter().filter(|&&v| v == 1.0).count(), 3 * 4);
    }

    #[test]
    fn emptied_layer_is_an_error() {
        let model = mlp(3, 2, 2);
        let mut mask = SparsityMask::all_keep(model.weights());
        drop(&mut mask, 1, &[], &[0, 1]);
        assert!(matches!(
            apply_mask(&model, &mask),
            Err(Error::EmptyLayer { ref layer, .. }) if layer == "fc2"
        ));
    }

    #[test]
    fn half_rows_of_large_layer_give_4x() {
        // 64 x 576 conv-like layer, 32 rows and 288 columns kept
        let mut mask = SparsityMask {
            layers: vec![LayerMask::all_keep("conv1", 64, 576)],
        };
        let rows: Vec<usize> = (0..32).collect();
        let cols: Vec<usize> = (0..288).map(|q| 2 * q).collect();
        drop(&mut mask, 0, &rows, &cols);
        assert_eq!(mask.layers[0].remaining(), 9216);
        assert_eq!(mask_rate(&mask), 4.0);

        // aggregated with an untouched 10 x 64 layer
        mask.layers.push(LayerMask::all_keep("fc2", 10, 64));
        let total = 64 * 576 + 640;
        let remaining = 9216 + 640;
        assert_eq!(mask_rate(&mask), total as f64 / remaining as f64);
    }

    #[test]
    fn report_arithmetic_and_round_trip() {
        let model = mlp(6, 4, 3);
        let mut mask = SparsityMask::all_keep(model.weights());
        drop(&mut mask, 0, &[0, 2], &[1]);
        let pruned = apply_mask(&model, &mask).unwrap();
        let report = compression_report(&pruned, &mask, &toy_data(&model, 9)).unwrap();
        assert_eq!(report.layers[0].remaining, 2 * 5);
        assert_eq!(report.remaining, report.remaining_series().iter().sum::<usize>());
        assert_eq!(report.rate, (24 + 12) as f64 / (10 + 12) as f64);
        // rows 0 and 2 of fc1 are dead but fc2 still reads them
        assert_eq!(report.layers[1].dead_inputs_kept, 2);
        assert_eq!(report.diagnostics.len(), 1);
        let json = serde_json::to_string(&report).unwrap();
        let back: CompressionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn epsilon_is_monotone() {
        let w = mlp(8, 6, 3).weights().clone();
        let mut prev = mask_from_groups(&w, &w, 0.0).unwrap();
        for eps in [0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 1e9] {
            let next = mask_from_groups(&w, &w, eps).unwrap();
            for (a, b) in prev.layers.iter().zip(&next.layers) {
                for (ka, kb) in a.row_keep.iter().zip(&b.row_keep).chain(a.col_keep.iter().zip(&b.col_keep)) {
                    assert!(!kb || *ka, "a group dropped at smaller epsilon came back");
                }
            }
            prev = next;
        }
        // huge epsilon drops everything
        assert!(prev.layers.iter().all(|l| l.kept_rows() == 0 && l.kept_cols() == 0));
    }

    #[test]
    fn compact_forward_equals_masked_forward() {
        let model = Model::new(
            ActShape::Spatial { channels: 2, height: 5, width: 5 },
            &[
                LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel_h: 3, kernel_w: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Conv2d { in_channels: 3, out_channels: 4, kernel_h: 3, kernel_w: 3, stride: 2, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 16, outputs: 3 },
            ],
            8,
        )
        .unwrap();
        let mut params = model.params().clone();
        for b in params.biases.iter_mut() {
            for (k, v) in b.iter_mut().enumerate() {
                *v = 0.1 * k as f64 - 0.05;
            }
        }
        let model = model.with_params(params).unwrap();
        let mut mask = SparsityMask::all_keep(model.weights());
        drop(&mut mask, 0, &[1], &[4, 13]);
        drop(&mut mask, 1, &[0, 3], &[9, 10, 11, 20]);
        drop(&mut mask, 2, &[2], &[0, 1, 2, 3, 7]);
        let pruned = apply_mask(&model, &mask).unwrap();
        let compact = CompactModel::from_model(&pruned);
        assert_eq!(compact.stored_weights(), mask.layers.iter().map(LayerMask::remaining).sum::<usize>());
        for s in 0..5 {
            let x: Vec<f64> = (0..50).map(|i| (((i + 7 * s) * 13 % 23) as f64 - 11.0) / 11.0).collect();
            let a = pruned.predict(&x).unwrap();
            let b = compact.predict(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subgradient_skips_zero_groups() {
        let w = WeightCollection::new(vec![(
            "l".into(),
            Matrix::from_rows(&[[3.0, 0.0], [0.0, 0.0]]).unwrap(),
        )])
        .unwrap();
        let g = group_penalty_subgradient(&w, 2.0);
        // entry (0,0): row norm 3, col norm 3 -> 2 * (1 + 1)
        assert_eq!(g.matrix(0).as_slice(), &[4.0, 0.0, 0.0, 0.0]);
    }
}
