use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ActShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled examples. Inputs are stored contiguously, one sample of
/// `sample_shape.len()` values after another.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: ActShape,
    classes: usize,
    split: Split,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        sample_shape: ActShape,
        classes: usize,
        split: Split,
        inputs: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let dim = sample_shape.len();
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::shape(
                format!("{} inputs of size {dim}", labels.len()),
                format!("{} values", inputs.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset inputs must be finite".into()));
        }
        Ok(Dataset {
            sample_shape,
            classes,
            split,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> ActShape {
        self.sample_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.sample_shape.len();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// A new dataset holding the listed examples (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_shape.len());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Dataset {
            sample_shape: self.sample_shape,
            classes: self.classes,
            split: self.split,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Same examples viewed with a different per-sample shape of equal size.
    pub fn reshaped(mut self, shape: ActShape) -> Result<Dataset> {
        if shape.len() != self.sample_shape.len() {
            return Err(Error::shape(self.sample_shape, shape));
        }
        self.sample_shape = shape;
        Ok(self)
    }
}
