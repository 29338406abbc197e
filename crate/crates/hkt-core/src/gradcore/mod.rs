//! Dense tensors plus tape-based reverse-mode differentiation.
//!
//! The tape records one forward pass; [`Tape::backward`] replays it in
//! reverse and accumulates gradients into every differentiable leaf.
//! 64-bit floats throughout. One tape is a single-writer unit; detached
//! tensor math is pure and thread-safe.

mod tape;
mod tensor;


pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Exact GELU (Gauss error function form, not the tanh approximation).
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx of exact GELU: Phi(x) + x phi(x).
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
