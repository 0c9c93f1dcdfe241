//! Dense `f64` tensors, a reverse-mode differentiation tape, the Adam
//! optimizer and a finite-difference gradient checker.
//!
//! Learnable values live in a [`ParamStore`]. Each training step binds the
//! store onto a fresh [`Tape`], runs the forward computation, calls
//! [`Tape::backward`] and folds the gradients back into the store before
//! [`Adam::step`] consumes them.

mod adam;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheck};
pub use params::{BoundParams, ParamId, ParamStore, Parameter};
pub use rng::SeededRng;
pub use tape::{Activation, ReduceKind, SegmentKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("index {index} out of range for length {len} in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("non-finite gradient for parameter `{0}`; optimizer step aborted")]
    NonFiniteGradient(String),
    #[error("function is non-finite at a perturbed point (coordinate {0})")]
    NonFinitePerturbation(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
