use std::collections::BTreeMap;

use super::*;
use crate::data::{generate_listops, ListOpsSpec};
use crate::gradcore::Tensor;
use crate::model::ModelConfig;

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 2,
        n_levels: 2,
        stride: 2,
        n_layers: 1,
        conv_kernel: 3,
        dropout: 0.0,
        vocab_size: 17,
        n_classes: 10,
        causal: true,
        max_seq_len: 16,
    }
}

fn tiny_splits() -> crate::data::Splits {
    generate_listops(&ListOpsSpec {
        max_depth: 2,
        max_arity: 3,
        seq_len: 16,
        n_train: 64,
        n_val: 16,
        n_test: 16,
        seed: 5,
    })
    .unwrap()
}

#[test]
fn clip_rescales_to_exactly_max_norm() {
    let mut grads = BTreeMap::new();
    grads.insert("a".to_string(), Tensor::matrix(1, 2, vec![3.0, 0.0]).unwrap());
    grads.insert("b".to_string(), Tensor::matrix(1, 1, vec![4.0]).unwrap());
    let pre = clip_global_norm(&mut grads, 1.0);
    assert!((pre - 5.0).abs() < 1e-12);
    let post: f64 = grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    assert!((post - 1.0).abs() <= 1e-9);

    // below the threshold nothing moves
    let mut small = BTreeMap::new();
    small.insert("a".to_string(), Tensor::matrix(1, 1, vec![0.25]).unwrap());
    let pre = clip_global_norm(&mut small, 1.0);
    assert!((pre - 0.25).abs() < 1e-15);
    assert_eq!(small["a"].at(0, 0), 0.25);
}

#[test]
fn adamw_decay_is_decoupled() {
    // with zero gradient the weight shrinks by exactly lr * wd * w per step
    let cfg = tiny_model_cfg();
    let mut model = crate::model::Model::init(cfg, 0).unwrap();
    let before = model.params.get("cls.w").unwrap().at(0, 0);
    let mut opt = AdamW::new(0.1);
    opt.step(&mut model.params, &BTreeMap::new(), 0.01);
    let after = model.params.get("cls.w").unwrap().at(0, 0);
    assert!((after - before * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    // exempt parameters (norm gains, biases, fusion logits) stay put
    assert_eq!(model.params.get("final.gain").unwrap().at(0, 0), 1.0);
    assert_eq!(model.params.get("layer0.attn.gamma").unwrap().at(0, 0), 0.0);
}

#[test]
fn one_cycle_has_warmup_peak_and_floor() {
    let s = OneCycle::new(1.0, 10, 100);
    assert!((s.lr(0) - 1.0 / 25.0).abs() < 1e-12);
    assert!((s.lr(10) - 1.0).abs() < 1e-12);
    assert!(s.lr(5) > s.lr(0) && s.lr(5) < 1.0);
    assert!(s.lr(99) < 1e-3);
    assert!((s.lr(100) - 1e-4).abs() < 1e-15);
    // monotone decay after the peak
    for t in 10..99 {
        assert!(s.lr(t + 1) <= s.lr(t) + 1e-15);
    }
}

#[test]
fn train_config_toml_and_invariants() {
    let tc = TrainConfig::from_toml("epochs = 4\nbatch_size = 8\npeak_lr = 0.001\n").unwrap();
    assert_eq!(tc.epochs, 4);
    assert_eq!(tc.batch_size, 8);
    assert!(TrainConfig::from_toml("epochs = 2\nwarmup_epochs = 2\n").is_err());
    assert!(TrainConfig::from_toml("clip_norm = 0.0\n").is_err());
}

#[test]
fn overfits_a_tiny_training_set() {
    let splits = tiny_splits();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 8,
        peak_lr: 1e-2,
        weight_decay: 0.0,
        clip_norm: 1.0,
        warmup_epochs: 2,
        seed: 1,
        ..Default::default()
    };
    let cfg = tiny_model_cfg();
    let outcome = train(&cfg, &tc, &splits.train, &splits.train, &ForwardOpts::default())
        .unwrap();
    let last = outcome.record.epochs.last().unwrap();
    assert!(
        last.train_acc >= 0.98,
        "train accuracy only {}",
        last.train_acc
    );
    assert!(last.train_loss < outcome.record.epochs[0].train_loss);
    assert_eq!(outcome.record.epochs.len(), 30);
    assert_eq!(outcome.record.config_hash.len(), 64);
}

#[test]
fn training_is_deterministic_per_seed() {
    let splits = tiny_splits();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 9,
        ..Default::default()
    };
    let cfg = tiny_model_cfg();
    let run = |_: ()| train(&cfg, &tc, &splits.train, &splits.val, &ForwardOpts::default());
    let a = run(()).unwrap();
    let b = run(()).unwrap();
    for (name, ta) in a.model.params.iter() {
        let tb = b.model.params.get(name).unwrap();
        assert_eq!(ta.data(), tb.data(), "parameter {name} diverged");
    }
    assert_eq!(
        serde_json::to_string(&a.record.epochs).unwrap(),
        serde_json::to_string(&b.record.epochs).unwrap()
    );
}

#[test]
fn fusion_penalties_train_and_record() {
    let splits = tiny_splits();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        div_weight: 0.1,
        mono_weight: 0.1,
        ..Default::default()
    };
    let cfg = tiny_model_cfg();
    let outcome =
        train(&cfg, &tc, &splits.train, &splits.val, &ForwardOpts::default()).unwrap();
    assert_eq!(outcome.record.epochs.len(), 2);
    assert!(outcome.record.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn epochs_csv_has_header_and_rows() {
    let splits = tiny_splits();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 32,
        ..Default::default()
    };
    let outcome = train(
        &tiny_model_cfg(),
        &tc,
        &splits.train,
        &splits.val,
        &ForwardOpts::default(),
    )
    .unwrap();
    let csv = epochs_csv(&outcome.record);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,"));
}
