//! Dense reverse-mode automatic differentiation over `f64` tensors, with the
//! Adam optimizer.
//!
//! Every forward op is recorded on a [`Graph`]; [`Graph::backward`] sweeps the
//! tape in reverse from a scalar root. Broadcasting is limited to adding (or
//! multiplying) a bias row over the rows of a matrix. Anything else needs an
//! explicit [`Graph::reshape`].

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheck, LossFn};
pub use graph::{Axis, Gradients, Graph, Var, LEAKY_SLOPE};
pub use params::{Bound, CheckpointError, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::softplus;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("slice {start}..{end} out of range for {shape:?}")]
    BadSlice { shape: Vec<usize>, start: usize, end: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("gradient for unknown parameter `{param}`")]
    UnknownParam { param: String },
}
