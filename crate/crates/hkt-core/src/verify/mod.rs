//! Executable certificates: causal-leakage measurement, reduction oracles
//! against independent plain-loop implementations, exact score-operation
//! counting and the downsampling Lipschitz bound check.

mod gradcheck;
mod leakage;
mod oracles;
mod ops;

pub use gradcheck::{gradient_spot_check, GradCheckReport};
pub use leakage::{measure_leakage, measure_leakage_unchecked, LeakageReport};
pub use oracles::{epsilon_bound_check, reduction_suite, EpsilonBoundReport, ReductionCheck};
pub use ops::{count_ops, theoretical_ratio, OpCount};

#[cfg(test)]
mod tests;
