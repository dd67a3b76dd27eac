//! Minimal dense-tensor reverse-mode differentiation engine.
//!
//! Forward ops record nodes on a [`Tape`]; [`Tape::backward`] replays the
//! nodes in exact reverse order and accumulates gradients at fan-in points.
//! Tensors are row-major and dense; the only broadcasting rule is adding a
//! bias vector to every row of a matrix. Storage is generic over [`Scalar`]
//! so training runs in f32 while gradient checks run in f64.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, OpKind, Tape, ValueId};
pub use tensor::{Scalar, Tensor};
