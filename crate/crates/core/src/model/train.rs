//! Minibatch training loop shared by baseline training, the primal step,
//! the direct-regularisation baseline and masked retraining.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Dataset, Model, OptimState, Params};

/// Anything whose parameters can be fitted by minibatch gradient descent.
///
/// The data lives outside the objective so a model can be cloned, pruned and
/// retrained without dragging its training set along.
pub trait Objective {
    type Data: ?Sized;

    fn params(&self) -> &Params;

    fn params_mut(&mut self) -> &mut Params;

    fn example_count(&self, data: &Self::Data) -> usize;

    /// Mean loss over `batch` and its gradient.
    fn loss_and_grad(&self, data: &Self::Data, batch: &[usize]) -> Result<(f64, Params)>;

    /// Called after every optimiser step; masked models re-zero pruned
    /// weights here.
    fn after_step(&mut self) {}

    /// Called on every gradient before the optimiser sees it.
    fn filter_grad(&self, _grad: &mut Params) {}
}

impl Objective for Model {
    type Data = Dataset;

    fn params(&self) -> &Params {
        Model::params(self)
    }

    fn params_mut(&mut self) -> &mut Params {
        Model::params_mut(self)
    }

    fn example_count(&self, data: &Dataset) -> usize {
        data.len()
    }

    fn loss_and_grad(&self, data: &Dataset, batch: &[usize]) -> Result<(f64, Params)> {
        self.backward(data, batch)
    }

    fn after_step(&mut self) {
        self.enforce_mask();
    }

    fn filter_grad(&self, grad: &mut Params) {
        if let Some(mask) = self.mask() {
            mask.apply_to_params(grad);
        }
    }
}

/// One pass over the data in shuffled minibatches.
///
/// `extra_grad(params, grad)` may add terms to each minibatch gradient (the
/// primal step's quadratic penalties, the direct baseline's subgradient).
/// Returns the sample-weighted mean of the minibatch losses.
pub fn run_epoch<O: Objective + ?Sized>(
    obj: &mut O,
    data: &O::Data,
    opt: &mut OptimState,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut extra_grad: impl FnMut(&Params, &mut Params) -> Result<()>,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let n = obj.example_count(data);
    if n == 0 {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(batch_size) {
        let (loss, mut grad) = obj.loss_and_grad(data, batch)?;
        extra_grad(obj.params(), &mut grad)?;
        obj.filter_grad(&mut grad);
        opt.adam_step(obj.params_mut(), &grad)?;
        obj.after_step();
        total += loss * batch.len() as f64;
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
}

/// Plain Adam training. A model carrying a mask keeps masked weights at
/// exactly zero throughout.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(EpochStats, &Model) -> Result<()>,
) -> Result<()> {
    let mut opt = OptimState::adam(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model.enforce_mask();
    for epoch in 1..=cfg.epochs {
        let loss = run_epoch(model, data, &mut opt, cfg.batch_size, &mut rng, |_, _| Ok(()))?;
        on_epoch(EpochStats { epoch, loss }, model)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActShape, LayerSpec, Split};

    fn separable(n: usize) -> Dataset {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let x = (i as f64 / n as f64) * 2.0 - 1.0;
            let y = ((i * 7) % n) as f64 / n as f64 - 0.5;
            inputs.extend([x, y]);
            labels.push(usize::from(x + 0.3 * y > 0.0));
        }
        Dataset::new(ActShape::Flat(2), 2, Split::Train, inputs, labels).unwrap()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = separable(64);
        let spec = [LayerSpec::Dense { inputs: 2, outputs: 2 }];
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 4,
        };
        let run = || {
            let mut m = Model::new(ActShape::Flat(2), &spec, 1).unwrap();
            let mut losses = Vec::new();
            train(&mut m, &data, &cfg, |s, _| {
                losses.push(s.loss);
                Ok(())
            })
            .unwrap();
            (m, losses)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        assert!(l1.last().unwrap() < &l1[0]);
        assert!(m1.accuracy(&data).unwrap() > 0.9);
    }

    #[test]
    fn zero_batch_size_rejected() {
        let data = separable(4);
        let mut m = Model::new(ActShape::Flat(2), &[LayerSpec::Dense { inputs: 2, outputs: 2 }], 0).unwrap();
        let mut opt = OptimState::adam(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_epoch(&mut m, &data, &mut opt, 0, &mut rng, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
