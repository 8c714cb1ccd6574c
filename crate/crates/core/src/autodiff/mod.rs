//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a straight-line program over `+ − × ÷`, constant
//! powers, `exp`, `log`, `sin`, `cos` and `tanh`. One forward sweep and one
//! reverse sweep give the value and the full gradient. Second derivatives
//! come from running both sweeps in [`Dual`] arithmetic (forward-over-reverse),
//! one input direction at a time.

mod scalar;
mod tape;

pub use scalar::{Dual, Scalar};
pub use tape::{Evaluation, NodeId, Op, Tape, TraversalStats};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("`{0}` is not an input of this tape")]
    UnknownVariable(String),
    #[error("expected {expected} inputs, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {node} ({op})")]
    NumericOverflow { node: usize, op: &'static str },
    #[error("{op} at node {node} is not differentiable at its argument")]
    NonDifferentiable { node: usize, op: &'static str },
    #[error("tape is empty")]
    EmptyTape,
}
