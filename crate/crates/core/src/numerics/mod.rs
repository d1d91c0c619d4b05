//! Dense matrices with reverse-mode gradients and a finite-difference checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use tensor::Tensor2;

/// Guard added under square roots of squared distances.
pub const SQRT_EPS: f64 = 1e-12;
