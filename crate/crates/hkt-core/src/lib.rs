//! Hierarchical multi-scale kernel attention: a desk-scale reference
//! implementation together with the analysis and verification suite for its
//! algebraic, spectral, information-theoretic and complexity properties.
//!
//! Module map:
//! - [`gradcore`]: dense tensors and tape-based reverse-mode differentiation
//! - [`numkit`]: Jacobi eigensolver, Cholesky, PCA, ridge regression, PRNG
//! - [`model`]: the hierarchical attention architecture and checkpoint format
//! - [`data`]: synthetic ListOps generator and byte-sequence loaders
//! - [`analysis`]: score decomposition, PSD audit, Gram factorisation,
//!   kurtosis / information bounds, decay calibration
//! - [`verify`]: causal-leakage certificates, reduction oracles, op counting
//! - [`trainer`]: AdamW + one-cycle training loop and the sweep harness

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcore;
pub mod model;
pub mod numkit;
pub mod trainer;
pub mod verify;

pub use error::{HktError, Result};
