//! Central finite-difference check of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Model, Params};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; below it the finite difference is dominated by rounding.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Random weight entries probed per prunable layer.
    pub probes_per_layer: usize,
    /// Random bias entries probed per prunable layer.
    pub bias_probes_per_layer: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            probes_per_layer: 20,
            bias_probes_per_layer: 5,
            step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(layer id, worst relative error in that layer)`.
    pub per_layer: Vec<(String, f64)>,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares [`Model::backward`] against central differences of
/// [`Model::forward`] on `batch`.
pub fn gradient_check(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    gradient_check_with(model, data, batch, cfg, |m| m.backward(data, batch).map(|(_, g)| g))
}

/// Like [`gradient_check`] but with a caller-supplied analytic gradient.
pub fn gradient_check_with(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    cfg: &GradCheckConfig,
    analytic: impl Fn(&Model) -> Result<Params>,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient check needs a non-empty batch".into()));
    }
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let grads = analytic(model)?;
    model.params().ensure_same_structure(&grads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe_model = model.clone();
    let loss_at = |m: &Model| m.forward(data, batch).map(|(l, _)| l);

    let mut per_layer = Vec::new();
    let mut probes = 0;
    let mut max_rel_error: f64 = 0.0;
    for i in 0..model.weights().len() {
        let mut worst: f64 = 0.0;
        let w_len = model.weights().matrix(i).len();
        let b_len = model.params().biases[i].len();
        let mut picks: Vec<(bool, usize)> =
            (0..cfg.probes_per_layer).map(|_| (true, rng.gen_range(0..w_len))).collect();
        picks.extend((0..cfg.bias_probes_per_layer).map(|_| (false, rng.gen_range(0..b_len))));
        for (is_weight, k) in picks {
            let base = if is_weight {
                model.weights().matrix(i).as_slice()[k]
            } else {
                model.params().biases[i][k]
            };
            let nudge = |m: &mut Model, v: f64| {
                if is_weight {
                    m.weights_mut().matrix_mut(i).as_mut_slice()[k] = v;
                } else {
                    m.params_mut().biases[i][k] = v;
                }
            };
            nudge(&mut probe_model, base + cfg.step);
            let plus = loss_at(&probe_model)?;
            nudge(&mut probe_model, base - cfg.step);
            let minus = loss_at(&probe_model)?;
            nudge(&mut probe_model, base);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let exact = if is_weight {
                grads.weights.matrix(i).as_slice()[k]
            } else {
                grads.biases[i][k]
            };
            worst = worst.max(relative_error(exact, numeric));
            probes += 1;
        }
        max_rel_error = max_rel_error.max(worst);
        per_layer.push((model.weights().id(i).to_string(), worst));
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_layer,
        probes,
    })
}
