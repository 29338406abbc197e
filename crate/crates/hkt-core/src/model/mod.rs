//! The hierarchical multi-scale attention architecture: causal downsampling
//! cascade, per-level scoring, score fusion, hybrid conv/attention heads,
//! dynamic output fusion, encoder stacking, and the checkpoint format.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{BoundModel, ForwardOpts, LayerTrace, Model, Trace};
pub use params::{init_params, Params};

#[cfg(test)]
mod tests;
