use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;

/// Adam with bias correction. Moment buffers are created on the first step
/// with the shape of the parameters they track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Option<(Params, Params)>,
}

impl OptimState {
    pub fn adam(learning_rate: f64) -> Self {
        OptimState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.moments = None;
    }

    pub fn first_moment(&self) -> Option<&Params> {
        self.moments.as_ref().map(|(m, _)| m)
    }

    pub fn adam_step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        params.ensure_same_structure(grads)?;
        let (m, v) = self
            .moments
            .get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
        m.ensure_same_structure(params)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let eps = self.epsilon;

        let mut finite = true;
        for (((p, g), m), v) in params
            .slices_mut()
            .zip(grads.slices())
            .zip(m.slices_mut())
            .zip(v.slices_mut())
        {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                finite &= p.is_finite();
            }
        }
        if !finite {
            return Err(Error::NonFinite(format!(
                "parameters became non-finite at Adam step {}",
                self.step
            )));
        }
        Ok(())
    }
}
