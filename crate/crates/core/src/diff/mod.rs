//! Dense matrix primitives with recorded reverse-mode differentiation.

mod check;
mod matrix;
mod tape;

pub use check::{grad_check, relative_error, GradCheck, REL_ERROR_FLOOR};
pub use matrix::Matrix;
pub use tape::{stable_softmax, Gradients, Primitive, Tape, Var, LOG_CLAMP};
