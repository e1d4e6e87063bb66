//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records each forward primitive as it executes; calling
//! [`Tape::backward`] on a scalar result walks the record in reverse and
//! returns [`Gradients`] for every value that requires one. Tapes are cheap
//! to build and are meant to be discarded after each step.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{AdError, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use optim::{optim_step, OptimState};
pub use params::{he_uniform, xavier_uniform, BoundParams, ParamGrads, ParamId, ParamStore};
pub use scalar::Real;
pub use tape::{ConvGeometry, Gradients, Tape, Var};
pub use tensor::Tensor;
