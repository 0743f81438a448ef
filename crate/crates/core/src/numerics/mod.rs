//! Dense `f64` tensors, a define-by-run reverse-mode graph, and a
//! central-difference gradient checker.

mod gradcheck;
mod graph;
mod rng;
mod tensor;

use thiserror::Error;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use graph::{floor_prob, softmax, Gradients, Graph, Var, PROB_FLOOR};
pub use rng::XorShiftRng;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} does not accept an input of shape {shape:?}")]
    InvalidRank { op: &'static str, shape: Vec<usize> },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range in {op} (size {size})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("window of {window} rows exceeds sequence of {len} rows")]
    WindowTooLarge { window: usize, len: usize },
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("loss is not a node of this graph")]
    DisconnectedLoss,
    #[error("variable belongs to a different graph")]
    ForeignVar,
}
