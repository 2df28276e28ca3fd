//! Dense row-major tensors with a reverse-mode autodiff tape.
//!
//! Every differentiable operation is a method on [`Tape`]; values live on the
//! tape and are referenced through lightweight [`Var`] handles. Training runs
//! in `f32`, gradient checks in `f64` (see [`gradcheck`]).

pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod scalar;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use scalar::Scalar;
pub use schedule::LrSchedule;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
