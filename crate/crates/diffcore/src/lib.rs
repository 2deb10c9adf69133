//! A small dense-array engine with reverse-mode automatic differentiation.
//!
//! Values are row-major `f64` [`Tensor`]s. Computations are recorded on a
//! [`Tape`] as they run (define-by-run); [`Tape::backward`] walks the record
//! in reverse, returns the [`Gradients`] of every leaf created with
//! `requires_grad`, and clears the tape.

mod adam;
mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::DiffError;
pub use gradcheck::{finite_diff_check, finite_diff_check_many, FdReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = DiffError> = std::result::Result<T, E>;
