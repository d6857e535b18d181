//! Small objectives with known structure, used to exercise the pruner
//! independently of the neural-network engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Objective, Params};
use crate::tensor::{Matrix, WeightCollection};

fn zero_biases(weights: &WeightCollection) -> Vec<Vec<f64>> {
    weights.matrices().map(|m| vec![0.0; m.rows()]).collect()
}

fn params_for(weights: WeightCollection) -> Params {
    let biases = zero_biases(&weights);
    Params::new(weights, biases).expect("bias layout follows the weights")
}

/// `f(W) = 0`. The data is a single dummy example.
#[derive(Clone, Debug, PartialEq)]
pub struct NullObjective {
    params: Params,
}

impl NullObjective {
    pub fn new(weights: WeightCollection) -> Self {
        NullObjective {
            params: params_for(weights),
        }
    }
}

impl Objective for NullObjective {
    type Data = ();

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn example_count(&self, _: &()) -> usize {
        1
    }

    fn loss_and_grad(&self, _: &(), _: &[usize]) -> Result<(f64, Params)> {
        Ok((0.0, self.params.zeros_like()))
    }
}

/// `f(W) = 1/2 |W - M|_F^2` summed over layers, for a fixed target `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticObjective {
    target: WeightCollection,
    params: Params,
}

impl QuadraticObjective {
    /// Starts at `W = M`.
    pub fn new(target: WeightCollection) -> Self {
        QuadraticObjective {
            params: params_for(target.clone()),
            target,
        }
    }

    pub fn target(&self) -> &WeightCollection {
        &self.target
    }
}

impl Objective for QuadraticObjective {
    type Data = ();

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn example_count(&self, _: &()) -> usize {
        1
    }

    fn loss_and_grad(&self, _: &(), _: &[usize]) -> Result<(f64, Params)> {
        let diff = self.params.weights.sub(&self.target)?;
        let loss = 0.5 * diff.frobenius_norm().powi(2);
        let mut grad = self.params.zeros_like();
        grad.weights = diff;
        Ok((loss, grad))
    }
}

/// Inputs and targets of a linear regression problem, one example per row.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    pub inputs: Matrix,
    pub targets: Matrix,
}

/// Single linear layer under squared loss:
/// `f(W) = 1/(2n) Σ_j |W a_j - b_j|²` over the examples of a batch.
/// Convex in `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares {
    params: Params,
}

impl LeastSquares {
    pub fn new(initial: Matrix) -> Self {
        LeastSquares {
            params: params_for(
                WeightCollection::new(vec![("fc1".into(), initial)]).expect("single layer"),
            ),
        }
    }

    pub fn weight(&self) -> &Matrix {
        self.params.weights.matrix(0)
    }
}

impl Objective for LeastSquares {
    type Data = RegressionData;

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn example_count(&self, data: &RegressionData) -> usize {
        data.inputs.rows()
    }

    fn loss_and_grad(&self, data: &RegressionData, batch: &[usize]) -> Result<(f64, Params)> {
        let w = self.weight();
        if data.inputs.cols() != w.cols() || data.targets.cols() != w.rows() {
            return Err(Error::shape(
                format!("inputs with {} and targets with {} columns", w.cols(), w.rows()),
                format!("{} and {}", data.inputs.cols(), data.targets.cols()),
            ));
        }
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grad = self.params.zeros_like();
        let gw = grad.weights.matrix_mut(0);
        let mut loss = 0.0;
        for &j in batch {
            let a = data.inputs.row(j);
            let b = data.targets.row(j);
            for (p, &bp) in b.iter().enumerate() {
                let r = w.row(p).iter().zip(a).map(|(x, y)| x * y).sum::<f64>() - bp;
                loss += 0.5 * r * r;
                for (g, &aq) in gw.row_mut(p).iter_mut().zip(a) {
                    *g += r * aq;
                }
            }
        }
        let n = batch.len() as f64;
        grad.scale_in_place(1.0 / n);
        Ok((loss / n, grad))
    }
}

/// Regression problem whose true weight matrix has planted zero rows and
/// zero columns. Returns `(data, true weights)`.
pub fn planted_regression(
    examples: usize,
    outputs: usize,
    inputs: usize,
    zero_rows: &[usize],
    zero_cols: &[usize],
    seed: u64,
) -> (RegressionData, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = Matrix::from_fn(outputs, inputs, |p, q| {
        if zero_rows.contains(&p) || zero_cols.contains(&q) {
            0.0
        } else {
            let mag = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        }
    });
    let a = Matrix::from_fn(examples, inputs, |_, _| rng.gen_range(-1.0..1.0));
    let targets = a.matmul(&truth.transpose()).expect("shapes agree");
    (RegressionData { inputs: a, targets }, truth)
}
