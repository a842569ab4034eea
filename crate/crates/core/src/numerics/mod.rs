//! Dense linear algebra, reverse-mode differentiation, and gradient checking.
//!
//! Everything is `f64`, row-major, and reduced sequentially so identical
//! inputs give bit-identical outputs.

mod dense;
mod gradcheck;
mod optim;
pub mod rng;
mod tape;

pub(crate) use dense::argmax_slice;
pub use dense::{argmax_det, dot_slices, softmax, Matrix, Vector};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
