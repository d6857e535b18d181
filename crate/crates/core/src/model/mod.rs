//! A small differentiable model engine.
//!
//! Models are a straight chain of layers ending in softmax cross-entropy.
//! Every dense and conv layer owns one GEMM-view weight matrix; those
//! matrices (and only those) form the prunable [`WeightCollection`]. Conv
//! layers run through explicit im2col, so the matrix the pruner sees is
//! literally the matrix used in the forward pass: rows are filters, columns
//! are `(in_channel, ky, kx)` filter-shape positions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SparsityMask;
use crate::tensor::{Matrix, WeightCollection};

pub mod conv;
pub mod dataset;
pub mod gradcheck;
pub mod optim;
pub mod train;

pub use conv::ConvGeometry;
pub use dataset::{Dataset, Split};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckConfig, GradCheckReport};
pub use optim::OptimState;
pub use train::{run_epoch, train, EpochStats, Objective, TrainConfig};

/// Samples per work unit when a batch is split across threads. Fixed, so the
/// floating-point reduction order never depends on the thread count.
const CHUNK: usize = 16;

/// Shape of an activation flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActShape {
    Flat(usize),
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Flat(n) => n,
            ActShape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActShape::Flat(n) => write!(f, "{n}"),
            ActShape::Spatial {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
        }
    }
}

impl FromStr for ActShape {
    type Err = Error;

    /// `"64"` or `"1x8x8"` (channels x height x width).
    fn from_str(s: &str) -> Result<Self> {
        let dims = s
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("bad shape `{s}`")))?;
        match dims[..] {
            [n] => Ok(ActShape::Flat(n)),
            [channels, height, width] => Ok(ActShape::Spatial {
                channels,
                height,
                width,
            }),
            _ => Err(Error::Config(format!("bad shape `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Flatten,
    SoftmaxCrossEntropy,
}

impl LayerSpec {
    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// GEMM weight shape of a prunable layer.
    pub fn weight_shape(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((outputs, inputs)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((out_channels, in_channels * kernel_h * kernel_w)),
            _ => None,
        }
    }

    pub fn geometry(&self, input: ActShape) -> Option<ConvGeometry> {
        match (*self, input) {
            (
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    ..
                },
                ActShape::Spatial {
                    channels,
                    height,
                    width,
                },
            ) => Some(ConvGeometry {
                channels,
                height,
                width,
                kernel_h,
                kernel_w,
                stride,
                padding,
            }),
            _ => None,
        }
    }

    /// Output shape for the given input shape, or an error if they do not
    /// compose.
    pub fn output_shape(&self, input: ActShape) -> Result<ActShape> {
        match (*self, input) {
            (LayerSpec::Dense { inputs, outputs }, ActShape::Flat(n)) if n == inputs => {
                Ok(ActShape::Flat(outputs))
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                },
                ActShape::Spatial {
                    channels,
                    height,
                    width,
                },
            ) if channels == in_channels
                && stride > 0
                && height + 2 * padding >= kernel_h
                && width + 2 * padding >= kernel_w
                && kernel_h > 0
                && kernel_w > 0 =>
            {
                let g = self.geometry(input).expect("conv geometry");
                Ok(ActShape::Spatial {
                    channels: out_channels,
                    height: g.out_h(),
                    width: g.out_w(),
                })
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::Flatten, s) => Ok(ActShape::Flat(s.len())),
            (LayerSpec::SoftmaxCrossEntropy, ActShape::Flat(n)) if n > 0 => Ok(ActShape::Flat(n)),
            (spec, s) => Err(Error::shape(format!("input compatible with {spec}"), s)),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense:{inputs}:{outputs}"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => write!(
                f,
                "conv:{in_channels}:{out_channels}:{kernel_h}:{kernel_w}:{stride}:{padding}"
            ),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::SoftmaxCrossEntropy => f.write_str("xent"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// `dense:IN:OUT`, `conv:IN:OUT:KH:KW:STRIDE:PAD`, `relu`, `flatten`, `xent`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let nums = |xs: &[&str]| -> Result<Vec<usize>> {
            xs.iter()
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad layer `{s}`")))
                })
                .collect()
        };
        match parts[0].trim() {
            "dense" if parts.len() == 3 => {
                let n = nums(&parts[1..])?;
                Ok(LayerSpec::Dense {
                    inputs: n[0],
                    outputs: n[1],
                })
            }
            "conv" if parts.len() == 7 => {
                let n = nums(&parts[1..])?;
                Ok(LayerSpec::Conv2d {
                    in_channels: n[0],
                    out_channels: n[1],
                    kernel_h: n[2],
                    kernel_w: n[3],
                    stride: n[4],
                    padding: n[5],
                })
            }
            "relu" if parts.len() == 1 => Ok(LayerSpec::Relu),
            "flatten" if parts.len() == 1 => Ok(LayerSpec::Flatten),
            "xent" if parts.len() == 1 => Ok(LayerSpec::SoftmaxCrossEntropy),
            _ => Err(Error::Config(format!("unknown layer `{s}`"))),
        }
    }
}

/// Trainable parameters: prunable GEMM weights plus one bias vector per
/// prunable layer (bias `p` belongs to row `p`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub weights: WeightCollection,
    pub biases: Vec<Vec<f64>>,
}

impl Params {
    pub fn new(weights: WeightCollection, biases: Vec<Vec<f64>>) -> Result<Self> {
        if biases.len() != weights.len() {
            return Err(Error::shape(
                format!("{} bias vectors", weights.len()),
                biases.len(),
            ));
        }
        for (i, b) in biases.iter().enumerate() {
            if b.len() != weights.matrix(i).rows() {
                return Err(Error::shape(
                    format!("bias of length {} for `{}`", weights.matrix(i).rows(), weights.id(i)),
                    b.len(),
                ));
            }
        }
        Ok(Params { weights, biases })
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            weights: self.weights.zeros_like(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .matrices()
            .map(Matrix::as_slice)
            .chain(self.biases.iter().map(Vec::as_slice))
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .matrices_mut()
            .map(Matrix::as_mut_slice)
            .chain(self.biases.iter_mut().map(Vec::as_mut_slice))
    }

    pub fn param_count(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    pub fn add_assign(&mut self, other: &Params) -> Result<()> {
        self.ensure_same_structure(other)?;
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for a in self.slices_mut() {
            for x in a {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn ensure_same_structure(&self, other: &Params) -> Result<()> {
        self.weights.ensure_same_structure(&other.weights)?;
        if self.biases.len() != other.biases.len()
            || self
                .biases
                .iter()
                .zip(&other.biases)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::shape("matching bias vectors", "different bias layout"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    spec: LayerSpec,
    input: ActShape,
    /// Index into the weight collection for prunable layers.
    param: Option<usize>,
}

/// Per-layer values saved by the forward pass for backpropagation.
enum Saved {
    Dense(Vec<f64>),
    Conv(Matrix),
    Relu(Vec<bool>),
    Nothing,
}

/// A chain of layers ending in softmax cross-entropy, with its parameters and
/// an optional sparsity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    input: ActShape,
    layers: Vec<Layer>,
    params: Params,
    mask: Option<SparsityMask>,
}

impl Model {
    /// Builds a model with uniform fan-in initialisation
    /// (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))`) and zero biases.
    ///
    /// A trailing softmax cross-entropy is appended if the spec list does not
    /// end with one. Prunable layers are named `conv{k}` / `fc{k}`, counting
    /// prunable layers from 1.
    pub fn new(input: ActShape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut specs = specs.to_vec();
        if specs.last() != Some(&LayerSpec::SoftmaxCrossEntropy) {
            specs.push(LayerSpec::SoftmaxCrossEntropy);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, spec) in specs.iter().enumerate() {
            if *spec == LayerSpec::SoftmaxCrossEntropy && k + 1 != specs.len() {
                return Err(Error::Config("the loss must be the last layer".into()));
            }
            let out = spec.output_shape(shape)?;
            let param = spec.weight_shape().map(|(rows, cols)| {
                let idx = weights.len();
                let name = match spec {
                    LayerSpec::Conv2d { .. } => format!("conv{}", idx + 1),
                    _ => format!("fc{}", idx + 1),
                };
                let bound = 1.0 / (cols.max(1) as f64).sqrt();
                let m = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound));
                weights.push((name, m));
                biases.push(vec![0.0; rows]);
                idx
            });
            layers.push(Layer {
                spec: *spec,
                input: shape,
                param,
            });
            shape = out;
        }
        let params = Params::new(WeightCollection::new(weights)?, biases)?;
        Ok(Model {
            input,
            layers,
            params,
            mask: None,
        })
    }

    /// Same architecture with the given parameters.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        self.params.ensure_same_structure(&params)?;
        if !params.is_finite() {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        let mut m = self.clone();
        m.params = params;
        Ok(m)
    }

    pub fn input_shape(&self) -> ActShape {
        self.input
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Input shape of every prunable layer, in weight-collection order.
    pub fn prunable_inputs(&self) -> Vec<(LayerSpec, ActShape)> {
        self.layers
            .iter()
            .filter(|l| l.param.is_some())
            .map(|l| (l.spec, l.input))
            .collect()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.input.len())
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn weights(&self) -> &WeightCollection {
        &self.params.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightCollection {
        &mut self.params.weights
    }

    pub fn mask(&self) -> Option<&SparsityMask> {
        self.mask.as_ref()
    }

    pub(crate) fn set_mask(&mut self, mask: Option<SparsityMask>) {
        self.mask = mask;
    }

    /// Zeroes every masked weight and the bias of every dropped row.
    pub fn enforce_mask(&mut self) {
        if let Some(mask) = &self.mask {
            mask.apply_to_params(&mut self.params);
        }
    }

    fn check_batch(&self, data: &Dataset, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if data.sample_shape().len() != self.input.len() {
            return Err(Error::shape(self.input, data.sample_shape()));
        }
        if data.classes() > self.classes() {
            return Err(Error::shape(
                format!("at most {} classes", self.classes()),
                data.classes(),
            ));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
            return Err(Error::InvalidArgument(format!(
                "sample index {i} out of range for {} samples",
                data.len()
            )));
        }
        Ok(())
    }

    /// Logits for one sample, optionally recording what backprop needs.
    fn sample_forward(&self, x: &[f64], saved: Option<&mut Vec<Saved>>) -> Vec<f64> {
        let mut act = x.to_vec();
        let mut saved = saved;
        for layer in &self.layers {
            let (next, keep) = match layer.spec {
                LayerSpec::Dense { .. } => {
                    let i = layer.param.expect("dense layer has params");
                    let w = self.params.weights.matrix(i);
                    let b = &self.params.biases[i];
                    let y = (0..w.rows())
                        .map(|p| b[p] + w.row(p).iter().zip(&act).map(|(a, x)| a * x).sum::<f64>())
                        .collect();
                    (y, Saved::Dense(act))
                }
                LayerSpec::Conv2d { .. } => {
                    let i = layer.param.expect("conv layer has params");
                    let g = layer.spec.geometry(layer.input).expect("conv geometry");
                    let cols = conv::im2col(&act, &g);
                    let mut y = self.params.weights.matrix(i).matmul(&cols).expect("conv shapes");
                    for (p, &b) in self.params.biases[i].iter().enumerate() {
                        for v in y.row_mut(p) {
                            *v += b;
                        }
                    }
                    (y.into_vec(), Saved::Conv(cols))
                }
                LayerSpec::Relu => {
                    let on: Vec<bool> = act.iter().map(|&v| v > 0.0).collect();
                    let y = act.iter().map(|&v| v.max(0.0)).collect();
                    (y, Saved::Relu(on))
                }
                LayerSpec::Flatten | LayerSpec::SoftmaxCrossEntropy => (act, Saved::Nothing),
            };
            if let Some(s) = saved.as_deref_mut() {
                s.push(keep);
            }
            act = next;
        }
        act
    }

    /// Accumulates the gradient of `dlogits . logits(x)` into `grads`.
    fn sample_backward(&self, saved: Vec<Saved>, dlogits: Vec<f64>, grads: &mut Params) {
        let mut delta = dlogits;
        for (layer, saved) in self.layers.iter().zip(saved).rev() {
            delta = match (layer.spec, saved) {
                (LayerSpec::Dense { .. }, Saved::Dense(x)) => {
                    let i = layer.param.expect("dense layer has params");
                    let w = self.params.weights.matrix(i);
                    let gw = grads.weights.matrix_mut(i);
                    let mut dx = vec![0.0; x.len()];
                    for (p, &d) in delta.iter().enumerate() {
                        grads.biases[i][p] += d;
                        if d == 0.0 {
                            continue;
                        }
                        for ((g, &xi), (dxi, &wi)) in gw
                            .row_mut(p)
                            .iter_mut()
                            .zip(&x)
                            .zip(dx.iter_mut().zip(w.row(p)))
                        {
                            *g += d * xi;
                            *dxi += d * wi;
                        }
                    }
                    dx
                }
                (LayerSpec::Conv2d { .. }, Saved::Conv(cols)) => {
                    let i = layer.param.expect("conv layer has params");
                    let g = layer.spec.geometry(layer.input).expect("conv geometry");
                    let w = self.params.weights.matrix(i);
                    let positions = cols.cols();
                    let dy = Matrix::from_vec(w.rows(), positions, delta).expect("conv grad shape");
                    let gw = grads.weights.matrix_mut(i);
                    let mut dcols = Matrix::zeros(cols.rows(), positions);
                    for o in 0..w.rows() {
                        let dy_row = dy.row(o);
                        grads.biases[i][o] += dy_row.iter().sum::<f64>();
                        for k in 0..cols.rows() {
                            let c_row = cols.row(k);
                            gw.as_mut_slice()[o * cols.rows() + k] +=
                                dy_row.iter().zip(c_row).map(|(a, b)| a * b).sum::<f64>();
                            let wk = w.get(o, k);
                            if wk != 0.0 {
                                for (dc, &d) in dcols.row_mut(k).iter_mut().zip(dy_row) {
                                    *dc += wk * d;
                                }
                            }
                        }
                    }
                    conv::col2im(&dcols, &g)
                }
                (LayerSpec::Relu, Saved::Relu(on)) => delta
                    .into_iter()
                    .zip(on)
                    .map(|(d, o)| if o { d } else { 0.0 })
                    .collect(),
                (LayerSpec::Flatten | LayerSpec::SoftmaxCrossEntropy, Saved::Nothing) => delta,
                _ => unreachable!("forward cache does not match layer"),
            };
        }
    }

    /// Mean softmax cross-entropy over `batch` and the `batch x classes`
    /// logits.
    pub fn forward(&self, data: &Dataset, batch: &[usize]) -> Result<(f64, Matrix)> {
        self.check_batch(data, batch)?;
        let per_chunk: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut logits = Vec::new();
                for &i in chunk {
                    let z = self.sample_forward(data.sample(i), None);
                    loss += cross_entropy(&z, data.label(i));
                    logits.extend(z);
                }
                (loss, logits)
            })
            .collect();
        let mut loss = 0.0;
        let mut logits = Vec::with_capacity(batch.len() * self.classes());
        for (l, z) in per_chunk {
            loss += l;
            logits.extend(z);
        }
        let loss = loss / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss}")));
        }
        let logits = Matrix::from_vec(batch.len(), self.classes(), logits)
            .map_err(|_| Error::NonFinite("non-finite logits".into()))?;
        Ok((loss, logits))
    }

    /// Mean loss over `batch` and its exact gradient with respect to every
    /// weight and bias.
    pub fn backward(&self, data: &Dataset, batch: &[usize]) -> Result<(f64, Params)> {
        self.check_batch(data, batch)?;
        let per_chunk: Vec<(f64, Params)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = self.params.zeros_like();
                let mut loss = 0.0;
                for &i in chunk {
                    let mut saved = Vec::with_capacity(self.layers.len());
                    let z = self.sample_forward(data.sample(i), Some(&mut saved));
                    let label = data.label(i);
                    loss += cross_entropy(&z, label);
                    let mut dz = softmax(&z);
                    dz[label] -= 1.0;
                    self.sample_backward(saved, dz, &mut grads);
                }
                (loss, grads)
            })
            .collect();
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for (l, g) in per_chunk {
            loss += l;
            grads.add_assign(&g)?;
        }
        let n = batch.len() as f64;
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss}")));
        }
        grads.scale_in_place(1.0 / n);
        if !grads.is_finite() {
            return Err(Error::NonFinite("non-finite gradient".into()));
        }
        Ok((loss, grads))
    }

    /// Mean loss and classification accuracy over the whole dataset.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
        }
        let all: Vec<usize> = (0..data.len()).collect();
        let (loss, logits) = self.forward(data, &all)?;
        let correct = (0..data.len())
            .filter(|&i| argmax(logits.row(i)) == data.label(i))
            .count();
        Ok((loss, correct as f64 / data.len() as f64))
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        self.evaluate(data).map(|(_, acc)| acc)
    }

    /// Logits of a single input, without any bookkeeping.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input.len() {
            return Err(Error::shape(self.input, x.len()));
        }
        Ok(self.sample_forward(x, None))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(z)[label]`, computed stably.
pub fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_model(w: &[&[f64]], b: &[f64]) -> Model {
        let (rows, cols) = (w.len(), w[0].len());
        let m = Model::new(
            ActShape::Flat(cols),
            &[LayerSpec::Dense {
                inputs: cols,
                outputs: rows,
            }],
            0,
        )
        .unwrap();
        let weights = WeightCollection::new(vec![("fc1".into(), Matrix::from_rows(w).unwrap())]).unwrap();
        m.with_params(Params::new(weights, vec![b.to_vec()]).unwrap())
            .unwrap()
    }

    fn data(flat: usize, classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Dataset {
        Dataset::new(ActShape::Flat(flat), classes, Split::Train, inputs, labels).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let model = dense_model(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]], &[0.0; 4]);
        let d = data(2, 4, vec![1.0, 2.0, -1.0, 0.5], vec![0, 3]);
        let (loss, _) = model.forward(&d, &[0, 1]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_cross_entropy() {
        // logits = W x + b = [1*1 + 0, 0*1 + 2] = [1, 2]; label 0
        // loss = ln(e^1 + e^2) - 1
        let model = dense_model(&[&[1.0], &[0.0]], &[0.0, 2.0]);
        let d = data(1, 2, vec![1.0], vec![0]);
        let (loss, logits) = model.forward(&d, &[0]).unwrap();
        assert_eq!(logits.as_slice(), &[1.0, 2.0]);
        let expected = (1f64.exp() + 2f64.exp()).ln() - 1.0;
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicating_batch_keeps_loss_and_gradient() {
        let model = Model::new(
            ActShape::Flat(3),
            &[
                LayerSpec::Dense { inputs: 3, outputs: 5 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 5, outputs: 2 },
            ],
            9,
        )
        .unwrap();
        let d = data(3, 2, vec![0.1, -0.4, 0.9, 1.0, 0.3, -0.2], vec![1, 0]);
        let (l1, g1) = model.backward(&d, &[0, 1]).unwrap();
        let (l2, g2) = model.backward(&d, &[0, 1, 0, 1]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.slices().zip(g2.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_weights_give_closed_form_softmax_gradient() {
        // With W = 0, b = 0 the softmax is uniform (1/2 each):
        // dL/dW = mean_j (p - e_{y_j}) x_j^T
        let model = dense_model(&[&[0.0, 0.0], &[0.0, 0.0]], &[0.0, 0.0]);
        let d = data(2, 2, vec![1.0, 2.0, -1.0, -2.0], vec![0, 1]);
        let (_, g) = model.backward(&d, &[0, 1]).unwrap();
        // sample 0: (p - e0) = [-0.5, 0.5], x = [1, 2]
        // sample 1: (p - e1) = [0.5, -0.5], x = [-1, -2]
        // mean: row0 = ([-0.5, -1] + [-0.5, -1]) / 2 = [-0.5, -1]
        let gw = g.weights.matrix(0);
        assert_eq!(gw.row(0), &[-0.5, -1.0]);
        assert_eq!(gw.row(1), &[0.5, 1.0]);
        assert_eq!(g.biases[0], vec![0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(Model::new(ActShape::Flat(3), &[LayerSpec::Dense { inputs: 4, outputs: 2 }], 0).is_err());
        assert!(Model::new(
            ActShape::Flat(3),
            &[LayerSpec::SoftmaxCrossEntropy, LayerSpec::Dense { inputs: 3, outputs: 2 }],
            0
        )
        .is_err());
        let model = dense_model(&[&[1.0, 0.0]], &[0.0]);
        let d = data(3, 1, vec![1.0, 2.0, 3.0], vec![0]);
        assert!(matches!(model.forward(&d, &[0]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(model.forward(&d, &[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn diverged_logits_are_reported() {
        let model = dense_model(&[&[1e308, 1e308], &[-1e308, -1e308]], &[0.0, 0.0]);
        let d = data(2, 2, vec![10.0, 10.0], vec![1]);
        assert!(matches!(model.forward(&d, &[0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn layer_spec_strings_round_trip() {
        for s in ["dense:64:32", "conv:1:4:3:3:1:1", "relu", "flatten", "xent"] {
            assert_eq!(s.parse::<LayerSpec>().unwrap().to_string(), s);
        }
        assert!("dense:1".parse::<LayerSpec>().is_err());
        assert_eq!("1x8x8".parse::<ActShape>().unwrap().len(), 64);
        assert!("1x8".parse::<ActShape>().is_err());
    }

    #[test]
    fn conv_layer_names_and_gemm_shapes() {
        let model = Model::new(
            ActShape::Spatial { channels: 2, height: 6, width: 6 },
            &[
                LayerSpec::Conv2d { in_channels: 2, out_channels: 4, kernel_h: 3, kernel_w: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 144, outputs: 3 },
            ],
            1,
        )
        .unwrap();
        let ids: Vec<&str> = model.weights().ids().collect();
        assert_eq!(ids, ["conv1", "fc2"]);
        assert_eq!(model.weights().matrix(0).shape(), (4, 18));
        assert_eq!(model.classes(), 3);
    }
}
