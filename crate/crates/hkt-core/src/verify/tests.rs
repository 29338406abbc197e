use super::*;
use crate::error::HktError;
use crate::model::{Model, ModelConfig};

fn small_cfg(causal: bool) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_levels: 3,
        stride: 2,
        n_layers: 1,
        conv_kernel: 3,
        dropout: 0.0,
        vocab_size: 8,
        n_classes: 4,
        causal,
        max_seq_len: 16,
    }
}

#[test]
fn causal_model_has_zero_leakage() {
    let model = Model::init(small_cfg(true), 7).unwrap();
    let report = measure_leakage(&model, 12, 2, 99).unwrap();
    assert_eq!(report.per_trial.len(), 2);
    assert!(
        report.max_leakage <= 1e-12,
        "leakage {}",
        report.max_leakage
    );
}

#[test]
fn leakage_refuses_noncausal_config() {
    let model = Model::init(small_cfg(false), 7).unwrap();
    let err = measure_leakage(&model, 8, 1, 0).unwrap_err();
    assert!(matches!(err, HktError::Refused(_)));
}

#[test]
fn noncausal_twin_actually_leaks() {
    // negative control: identical weights, causality switched off, and the
    // same instrument must register substantial gradient flow from the future
    let causal = Model::init(small_cfg(true), 7).unwrap();
    let mut twin = causal.clone();
    twin.cfg.causal = false;
    let report = measure_leakage_unchecked(&twin, 12, 2, 99).unwrap();
    assert!(
        report.max_leakage > 1e-3,
        "expected leakage, got {}",
        report.max_leakage
    );
}

#[test]
fn op_ratios_match_closed_form_when_floors_are_exact() {
    // T = 64 divides evenly through three halvings, so measured == theory
    let mut cfg = small_cfg(true);
    cfg.max_seq_len = 64;
    for (levels, want) in [(1, 1.0), (2, 1.25), (3, 1.3125), (4, 1.328125)] {
        cfg.n_levels = levels;
        let count = count_ops(&cfg, 64).unwrap();
        assert_eq!(count.ratio_measured, want, "levels={levels}");
        assert!((count.ratio_theory - want).abs() < 1e-15, "levels={levels}");
    }
}

#[test]
fn op_count_is_deterministic_and_additive() {
    let cfg = small_cfg(true);
    let a = count_ops(&cfg, 16).unwrap();
    let b = count_ops(&cfg, 16).unwrap();
    assert_eq!(a.total_entries, b.total_entries);
    assert_eq!(a.total_macs, b.total_macs);
    assert_eq!(a.per_level, vec![(256, 2048), (64, 512), (16, 128)]);
    assert_eq!(a.total_entries, 336);
}

#[test]
fn reduction_endpoints_match_independent_oracles() {
    let checks = reduction_suite(11, 10).unwrap();
    assert_eq!(checks.len(), 3);
    for c in &checks {
        assert!(c.pass, "{} max_dev={}", c.name, c.max_dev);
    }
}

#[test]
fn gradient_spot_check_stays_below_tolerance() {
    let report = gradient_spot_check(&small_cfg(true), 12, 25, 4).unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "{} at {}",
        report.max_rel_err,
        report.worst_param
    );
}

#[test]
fn epsilon_bound_holds_with_room_to_spare() {
    let model = Model::init(small_cfg(true), 3).unwrap();
    let report = epsilon_bound_check(&model, 16, 4, 5).unwrap();
    assert!(report.c_phi > 0.0);
    assert!(report.satisfied);
    assert!(report.measured_leakage <= 1e-12);
}
