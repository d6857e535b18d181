//! Primal-proximal pruning engine.
//!
//! Auxiliary copies `X` (row-sparse) and `Y` (column-sparse) of the weights
//! are tied to `W` through dual variables `Λ` and `Γ`. Each iteration runs
//!
//! 1. **primal**: a few epochs of Adam on
//!    `f(W) + ρ/2 |W - B1|² + ρ/2 |W - B2|²` with `B1 = X - Λ/ρ`, `B2 = Y - Γ/ρ`;
//! 2. **proximal**: `X = rowprox(W + Λ/ρ, λ/ρ)`, `Y = colprox(W + Γ/ρ, λ/ρ)`;
//! 3. **dual**: `Λ += ρ(W - X)`, `Γ += ρ(W - Y)`.
//!
//! The threshold `λ/ρ` is shared by every layer; how many rows and columns a
//! layer loses is decided by the proximal step alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{run_epoch, Objective, OptimState};
use crate::prox::{col_group_prox, row_group_prox, zero_groups, GroupAxis};
use crate::tensor::{col_l2_norms, row_l2_norms, Matrix, WeightCollection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Regularisation weight on the group norms.
    pub lambda: f64,
    /// Augmented-Lagrangian penalty.
    pub rho: f64,
    /// Number of primal-proximal iterations `T`.
    pub iterations: usize,
    pub primal_epochs: usize,
    pub learning_rate: f64,
    /// Relative threshold for calling a group zero when extracting the mask.
    pub zero_epsilon: f64,
    pub retrain_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Start every primal step with fresh Adam moments.
    pub reset_adam: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 1e-7,
            rho: 1e-3,
            iterations: 300,
            primal_epochs: 1,
            learning_rate: 1e-4,
            zero_epsilon: 0.0,
            retrain_epochs: 300,
            batch_size: 64,
            seed: 0,
            reset_adam: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and > 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and > 0");
        }
        if self.zero_epsilon.is_nan() || self.zero_epsilon < 0.0 {
            return bad("zero epsilon must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lambda / self.rho).is_finite() {
            return bad("lambda/rho must be finite");
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.lambda / self.rho
    }
}

/// Everything the iteration evolves: the live objective (holding `W`), the
/// auxiliary and dual variables, the iteration counter, and the optimiser
/// and shuffling state that carry across iterations.
#[derive(Clone, Debug)]
pub struct PrunerState<O> {
    pub w: O,
    pub x: WeightCollection,
    pub y: WeightCollection,
    pub lam: WeightCollection,
    pub gam: WeightCollection,
    /// Completed iterations.
    pub t: usize,
    optim: OptimState,
    rng: ChaCha8Rng,
}

impl<O: Objective> PrunerState<O> {
    pub fn weights(&self) -> &WeightCollection {
        &self.w.params().weights
    }

    pub fn optim(&self) -> &OptimState {
        &self.optim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub t: usize,
    pub train_loss: f64,
    /// `|W - X|_F / |W|_F`.
    pub consensus_x: f64,
    pub consensus_y: f64,
    /// Zero rows of each layer of `X`.
    pub zero_rows: Vec<usize>,
    /// Zero columns of each layer of `Y`.
    pub zero_cols: Vec<usize>,
    /// Unscaled penalty: row norms of `X` plus column norms of `Y`.
    pub penalty: f64,
}

/// Receives metrics after every iteration. Everything observed before a
/// failure has already been delivered, so observers double as the record of
/// a partial run.
pub trait Observer<O> {
    fn on_iteration(&mut self, metrics: &IterationMetrics, state: &PrunerState<O>) -> Result<()>;
}

impl<O, F> Observer<O> for F
where
    F: FnMut(&IterationMetrics, &PrunerState<O>) -> Result<()>,
{
    fn on_iteration(&mut self, metrics: &IterationMetrics, state: &PrunerState<O>) -> Result<()> {
        self(metrics, state)
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl<O> Observer<O> for Silent {
    fn on_iteration(&mut self, _: &IterationMetrics, _: &PrunerState<O>) -> Result<()> {
        Ok(())
    }
}

/// `X = Y = W`, `Λ = Γ = 0`, `t = 0`.
pub fn init_state<O: Objective + Clone>(pretrained: &O, hp: &HyperParams) -> PrunerState<O> {
    let w = pretrained.clone();
    let weights = w.params().weights.clone();
    PrunerState {
        x: weights.clone(),
        y: weights.clone(),
        lam: weights.zeros_like(),
        gam: weights.zeros_like(),
        t: 0,
        optim: OptimState::adam(hp.learning_rate),
        rng: ChaCha8Rng::seed_from_u64(hp.seed),
        w,
    }
}

/// Gradient of `ρ/2 |W - B1|² + ρ/2 |W - B2|²`, written as
/// `(ρ(W - X) + Λ) + (ρ(W - Y) + Γ)` so that `ρ = 0` needs no division.
pub fn consensus_gradient(
    w: &WeightCollection,
    x: &WeightCollection,
    y: &WeightCollection,
    lam: &WeightCollection,
    gam: &WeightCollection,
    rho: f64,
) -> Result<WeightCollection> {
    let side = |aux: &WeightCollection, dual: &WeightCollection| -> Result<WeightCollection> {
        let mut g = w.sub(aux)?.scale(rho);
        g.axpy(1.0, dual)?;
        Ok(g)
    };
    side(x, lam)?.add(&side(y, gam)?)
}

/// Runs `primal_epochs` epochs of Adam on the primal subproblem. Returns the
/// mean data loss of the last epoch.
pub fn primal_step<O: Objective>(
    state: &mut PrunerState<O>,
    data: &O::Data,
    hp: &HyperParams,
) -> Result<f64> {
    if state.t >= hp.iterations {
        return Err(Error::InvalidArgument(format!(
            "primal step requested after the final iteration ({} of {})",
            state.t, hp.iterations
        )));
    }
    if hp.reset_adam {
        state.optim.reset();
    }
    state.optim.learning_rate = hp.learning_rate;
    let PrunerState {
        w,
        x,
        y,
        lam,
        gam,
        optim,
        rng,
        t,
    } = state;
    let mut loss = f64::NAN;
    for _ in 0..hp.primal_epochs {
        loss = run_epoch(w, data, optim, hp.batch_size, rng, |params, grad| {
            let extra = consensus_gradient(&params.weights, x, y, lam, gam, hp.rho)?;
            grad.weights.axpy(1.0, &extra)
        })
        .map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("iteration {}: {msg}", *t + 1)),
            other => other,
        })?;
    }
    Ok(loss)
}

fn prox_layers(
    w: &WeightCollection,
    dual: &WeightCollection,
    rho: f64,
    threshold: f64,
    prox: fn(&Matrix, f64) -> Result<Matrix>,
) -> Result<WeightCollection> {
    let layers = (0..w.len())
        .into_par_iter()
        .map(|i| {
            let mut c = w.matrix(i).clone();
            c.axpy(1.0 / rho, dual.matrix(i))?;
            Ok((w.id(i).to_string(), prox(&c, threshold)?))
        })
        .collect::<Result<Vec<_>>>()?;
    WeightCollection::new(layers)
}

/// Closed-form update of `X` (row groups) and `Y` (column groups).
pub fn proximal_step<O: Objective>(state: &mut PrunerState<O>, hp: &HyperParams) -> Result<()> {
    let threshold = hp.threshold();
    let w = &state.w.params().weights;
    state.x = prox_layers(w, &state.lam, hp.rho, threshold, row_group_prox)?;
    state.y = prox_layers(w, &state.gam, hp.rho, threshold, col_group_prox)?;
    Ok(())
}

/// `Λ += ρ(W - X)`, `Γ += ρ(W - Y)`.
pub fn dual_step<O: Objective>(state: &mut PrunerState<O>, hp: &HyperParams) -> Result<()> {
    let w = &state.w.params().weights;
    state.lam.axpy(hp.rho, &w.sub(&state.x)?)?;
    state.gam.axpy(hp.rho, &w.sub(&state.y)?)?;
    Ok(())
}

fn relative_gap(w: &WeightCollection, aux: &WeightCollection) -> Result<f64> {
    let d = w.frobenius_distance(aux)?;
    let n = w.frobenius_norm();
    Ok(if n == 0.0 { d } else { d / n })
}

pub fn iteration_metrics<O: Objective>(state: &PrunerState<O>, train_loss: f64) -> Result<IterationMetrics> {
    let w = state.weights();
    let penalty = state
        .x
        .matrices()
        .map(|m| row_l2_norms(m).iter().sum::<f64>())
        .sum::<f64>()
        + state
            .y
            .matrices()
            .map(|m| col_l2_norms(m).iter().sum::<f64>())
            .sum::<f64>();
    Ok(IterationMetrics {
        t: state.t,
        train_loss,
        consensus_x: relative_gap(w, &state.x)?,
        consensus_y: relative_gap(w, &state.y)?,
        zero_rows: state.x.matrices().map(|m| zero_groups(m, GroupAxis::Row)).collect(),
        zero_cols: state.y.matrices().map(|m| zero_groups(m, GroupAxis::Col)).collect(),
        penalty,
    })
}

/// Initialises from `pretrained` and performs exactly `hp.iterations`
/// primal → proximal → dual iterations, reporting each to `observer`.
pub fn run<O: Objective + Clone>(
    pretrained: &O,
    data: &O::Data,
    hp: &HyperParams,
    observer: &mut impl Observer<O>,
) -> Result<(PrunerState<O>, Vec<IterationMetrics>)> {
    hp.validate()?;
    let mut state = init_state(pretrained, hp);
    let mut history = Vec::with_capacity(hp.iterations);
    while state.t < hp.iterations {
        let loss = primal_step(&mut state, data, hp)?;
        proximal_step(&mut state, hp)?;
        dual_step(&mut state, hp)?;
        state.t += 1;
        let metrics = iteration_metrics(&state, loss)?;
        observer.on_iteration(&metrics, &state)?;
        history.push(metrics);
    }
    Ok((state, history))
}
