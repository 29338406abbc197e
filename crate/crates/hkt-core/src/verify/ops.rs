use serde::Serialize;

use crate::error::Result;
use crate::gradcore::Tape;
use crate::model::{ForwardOpts, Model, ModelConfig};

#[derive(Debug, Clone, Serialize)]
pub struct OpCount {
    pub seq_len: usize,
    pub n_levels: usize,
    pub stride: usize,
    /// (score entries T_l^2, multiply-accumulates T_l^2 d_k^(l)) per level.
    pub per_level: Vec<(u64, u64)>,
    pub total_entries: u64,
    pub total_macs: u64,
    /// FFN multiply-accumulates per layer (8 T d^2), reported separately so
    /// the fixed overheads that dominate wall clock at small T are visible.
    pub ffn_macs_per_layer: u64,
    /// sum of T_l^2 over levels, divided by T^2.
    pub ratio_measured: f64,
    /// closed form without floor effects: sum_l s^-2l.
    pub ratio_theory: f64,
}

/// Overhead of hierarchical scoring relative to flat attention, ignoring
/// floor effects: (1 - s^(-2L)) / (1 - s^(-2)); for s=2 this is the
/// (4/3)(1 - 4^(-L)) form.
pub fn theoretical_ratio(levels: usize, stride: usize) -> f64 {
    let r = 1.0 / (stride * stride) as f64;
    (1.0 - r.powi(levels as i32)) / (1.0 - r)
}

/// Counts score-entry work with instrumented counters on a real forward
/// pass (a one-layer model run on dummy tokens), then cross-checks the
/// measured totals against direct per-level arithmetic.
pub fn count_ops(cfg: &ModelConfig, t: usize) -> Result<OpCount> {
    let mut probe_cfg = cfg.clone();
    probe_cfg.n_layers = 1;
    probe_cfg.dropout = 0.0;
    let model = Model::init(probe_cfg.clone(), 0)?;
    let tape = Tape::new();
    let bound = model.bind(&tape);
    bound.logits_from_tokens(&vec![0usize; t], &ForwardOpts::default(), None)?;
    let measured_entries = bound.score_entries.get();
    let measured_macs = bound.score_macs.get();

    let mut per_level = Vec::with_capacity(cfg.n_levels);
    let mut total_entries = 0u64;
    let mut total_macs = 0u64;
    for l in 0..cfg.n_levels {
        let tl = cfg.t_l(t, l) as u64;
        let entries = tl * tl;
        let macs = entries * cfg.d_k_l(l) as u64;
        per_level.push((entries, macs));
        total_entries += entries;
        total_macs += macs;
    }
    assert_eq!(measured_entries, total_entries, "instrumentation drift");
    assert_eq!(measured_macs, total_macs, "instrumentation drift");

    Ok(OpCount {
        seq_len: t,
        n_levels: cfg.n_levels,
        stride: cfg.stride,
        per_level,
        total_entries,
        total_macs,
        ffn_macs_per_layer: 8 * t as u64 * (cfg.d_model * cfg.d_model) as u64,
        ratio_measured: total_entries as f64 / (t as f64 * t as f64),
        ratio_theory: theoretical_ratio(cfg.n_levels, cfg.stride),
    })
}
