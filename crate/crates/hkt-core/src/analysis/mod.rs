//! Post-hoc diagnostics on trained models: symmetric/antisymmetric score
//! decomposition and directional energy, PSD spectrum audits, exponential
//! Gram factorisation with rank bounds, information-bound estimation
//! (rho^2, kurtosis corrections, net gains, optimal level weights), and
//! decay-rate calibration.

mod decay;
mod decompose;
mod emit;
mod gram;
mod info;

pub use decay::{decay_calibration, DecayFit};
pub use decompose::{
    decompose_scores, psd_audit, psd_summary, score_bilinear, split_symmetric,
    DecompositionReport, LevelDecomposition, PsdEntry,
};
pub use emit::{
    decomposition_csv, decomposition_jsonl, gram_csv, info_csv, jsonl, psd_csv,
};
pub use gram::{current_lambda, gram_factorisation, psd_clip, GramReport};
pub use info::{estimate_bounds, info_bounds, BoundEstimate, InfoConfig, InfoReport, LevelInfo};
