//! Dense `f64` tensors with define-by-run reverse-mode differentiation.

mod dense;
mod gradcheck;
mod params;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamCheck, ABSOLUTE_FLOOR};
pub use params::{BoundParams, Param, ParamGrads, ParamStore};
pub use tape::{Gradients, Tape, Var};
