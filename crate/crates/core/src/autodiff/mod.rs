//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GRAD_CHECK_STEP};
pub use optim::Sgd;
pub use tape::{Gradients, Tape, Var, DIST_TOL, PROB_EPS};
pub use tensor::Tensor;
