//! Dense-tensor reverse-mode differentiation engine.
//!
//! Everything runs in 64-bit floats with fixed iteration orders, so the same
//! seed and op sequence always reproduce the same bits.

pub mod gradcheck;
pub mod linalg;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
