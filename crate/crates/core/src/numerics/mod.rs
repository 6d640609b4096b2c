//! Dense `f64` tensors, a reverse-mode tape and finite-difference checking.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Logit assigned to excluded elements before a softmax.
pub const MASK_LOGIT: f64 = -1e9;
