//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! ```
//! use eenr_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = x.tanh().unwrap().sum().unwrap();
//! tape.backward(loss).unwrap();
//! let g = x.grad().unwrap();
//! assert!((g.data()[0] - (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);
//! ```

mod error;
pub mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use param::{AdamConfig, Param, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{CustomOp, OpKind, Tape, Var};
pub use tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    tape::sigmoid(x)
}

/// `log Σ exp(xᵢ)`, `-∞` for an empty or all `-∞` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
