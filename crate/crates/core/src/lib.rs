//! Structured pruning of dense and convolutional networks by removing whole
//! rows and columns of each weight matrix at once.
//!
//! The pieces, bottom up:
//!
//! * [`tensor`]: row-major matrices and named weight collections.
//! * [`model`]: a small CPU network engine with exact gradients.
//! * [`prox`]: closed-form row and column group soft-thresholding.
//! * [`pruner`]: the primal / proximal / dual iteration.
//! * [`pipeline`]: masks, hard pruning, retraining and compression accounting.
//! * [`harness`]: config, checkpoint, dataset and metrics files plus the
//!   command implementations behind the `structprune` binary.

pub mod error;
pub mod fixtures;
pub mod harness;
pub mod model;
pub mod pipeline;
pub mod prox;
pub mod pruner;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ActShape, Dataset, LayerSpec, Model, Params};
pub use pipeline::{CompressionReport, SparsityMask};
pub use pruner::HyperParams;
pub use tensor::{Matrix, WeightCollection};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/groups.md")]
    pub struct Groups;
    #[doc = include_str!("../../../book/src/prox.md")]
    pub struct Prox;
    #[doc = include_str!("../../../book/src/iteration.md")]
    pub struct Iteration;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub struct Pipeline;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
