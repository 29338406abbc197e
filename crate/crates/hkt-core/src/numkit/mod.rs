//! Numerical support: deterministic PRNG, symmetric eigensolver, Cholesky,
//! PCA, ridge regression and multivariate kurtosis statistics.

mod linalg;
mod prng;
mod stats;

#[cfg(test)]
mod tests;

pub use linalg::{cholesky, eigh, solve_spd, Eigh};
pub use prng::Prng;
pub use stats::{mahalanobis_sq_all, mardia_classical, mardia_offdiag, pca, ridge_r2, Pca};
