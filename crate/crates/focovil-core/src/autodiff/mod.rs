//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Graph`] is an append-only tape: every operation validates shapes,
//! computes its forward value eagerly, rejects non-finite outputs, and
//! records the parent links its backward rule needs. [`Graph::backward`]
//! replays the tape in reverse, accumulating gradients with fan-out handled
//! by addition. [`grad_check`] compares those gradients against central
//! differences and is the oracle every operation is tested against.

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, GradCheckFailure, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

/// Floor applied inside `log`/`sqrt` arguments and norm/cosine denominators
/// so gradients stay finite near zero.
pub const EPS_FLOOR: f64 = 1e-12;
