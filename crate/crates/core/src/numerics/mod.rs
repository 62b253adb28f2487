//! Numerical kernels shared by the trainable forecasters.

mod adam;
mod graph;
mod ols;
mod simplex;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use ols::ols_fit;
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("tensor rank {0} unsupported (1 to 3)")]
    Rank(usize),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite entry")]
    NonFinite,
    #[error("slice {start}..{end} on axis {axis} out of range for shape {shape:?}")]
    BadSlice {
        axis: usize,
        start: usize,
        end: usize,
        shape: Vec<usize>,
    },
    #[error("concatenation of zero tensors")]
    EmptyConcat,
    #[error("loss weights sum to zero")]
    ZeroWeight,
    #[error("loss node must be scalar, has shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("{params} parameter tensors but {grads} gradients")]
    ParamCount { params: usize, grads: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("regressor is constant")]
    DegenerateRegressor,
    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,
    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),
}
