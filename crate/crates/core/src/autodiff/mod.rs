//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod param;
mod tape;

pub use gradcheck::{grad_check, relative_error, Coverage, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub(crate) use tape::softmax_row;
pub use tape::{gelu, gelu_grad, Fault, Tape, Var};
