//! Training loop (AdamW + one-cycle schedule, full-batch tapes, NaN guard,
//! best-validation retention) and the ablation sweep.

mod optim;
mod schedule;
mod sweep;

pub use optim::{clip_global_norm, AdamW};
pub use schedule::OneCycle;
pub use sweep::{ablation_sweep, sweep_csv, SweepRow, SweepSpec};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{HktError, Result};
use crate::gradcore::{Tape, Var};
use crate::model::{ForwardOpts, Model, ModelConfig};
use crate::numkit::Prng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// weight on the entropy penalty sum_l lambda_l ln lambda_l
    pub div_weight: f64,
    /// weight on the monotonicity penalty sum_l relu(lambda_{l+1} - lambda_l)
    pub mono_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            peak_lr: 3e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_epochs: 1,
            seed: 0,
            div_weight: 0.0,
            mono_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HktError::Config("epochs and batch_size must be > 0".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(HktError::Config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.peak_lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(HktError::Config("peak_lr and clip_norm must be > 0".into()));
        }
        if self.weight_decay < 0.0 || self.div_weight < 0.0 || self.mono_weight < 0.0 {
            return Err(HktError::Config("penalty weights must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| HktError::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr_last: f64,
    pub grad_norm_max: f64,
    /// worst simplex violation of the fusion weights this epoch:
    /// max over layers of |sum lambda - 1|, any negative entry, and the
    /// same for the alpha rows of one validation sample
    pub simplex_dev: f64,
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    /// sha256 over the canonical config text, ties artifacts to settings
    pub config_hash: String,
    pub epochs: Vec<EpochMetrics>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub test_acc: Option<f64>,
}

pub fn config_hash(model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> String {
    let mut text = model_cfg.canonical_map();
    let _ = writeln!(
        text,
        "train={}",
        serde_json::to_string(train_cfg).unwrap_or_default()
    );
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    format!("{:x}", h.finalize())
}

pub fn epochs_csv(record: &RunRecord) -> String {
    let mut out =
        String::from("epoch,train_loss,train_acc,val_acc,lr_last,grad_norm_max,simplex_dev\n");
    for e in &record.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.epoch, e.train_loss, e.train_acc, e.val_acc, e.lr_last, e.grad_norm_max,
            e.simplex_dev
        );
    }
    out
}

/// Fraction of sequences whose argmax logit matches the label.
pub fn evaluate(model: &Model, data: &Dataset, opts: &ForwardOpts) -> Result<f64> {
    if data.is_empty() {
        return Err(HktError::Config("empty evaluation set".into()));
    }
    let eval_opts = ForwardOpts {
        train: false,
        ..opts.clone()
    };
    let mut correct = 0usize;
    for (seq, &label) in data.sequences.iter().zip(&data.labels) {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let (logits, _) = bound.logits_from_tokens(seq, &eval_opts, None)?;
        let row = logits.value();
        let mut best = 0usize;
        for c in 1..model.cfg.n_classes {
            if row.at(0, c) > row.at(0, best) {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub struct TrainOutcome {
    /// parameters from the best validation epoch
    pub model: Model,
    pub record: RunRecord,
}

/// Trains a fresh model. One tape per batch: bind once, average per-sample
/// cross-entropy, optional fusion penalties, single backward pass.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    opts: &ForwardOpts,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(HktError::Training("empty train or val split".into()));
    }
    let mut model = Model::init(model_cfg.clone(), train_cfg.seed)?;
    let mut opt = AdamW::new(train_cfg.weight_decay);
    let steps_per_epoch = train_set.len().div_ceil(train_cfg.batch_size);
    let sched = OneCycle::new(
        train_cfg.peak_lr,
        train_cfg.warmup_epochs * steps_per_epoch,
        train_cfg.epochs * steps_per_epoch,
    );
    let mut shuffle_rng = Prng::new(train_cfg.seed ^ 0x9e3779b97f4a7c15);
    let mut dropout_rng = Prng::new(train_cfg.seed ^ 0x2545f4914f6cdd1d);
    let train_opts = ForwardOpts {
        train: true,
        ..opts.clone()
    };

    let mut record = RunRecord {
        model_cfg: model_cfg.clone(),
        train_cfg: train_cfg.clone(),
        config_hash: config_hash(model_cfg, train_cfg),
        epochs: Vec::new(),
        best_val_acc: f64::NEG_INFINITY,
        best_epoch: 0,
        test_acc: None,
    };
    let mut best_params = model.params.clone();
    let mut step = 0usize;

    for epoch in 0..train_cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut lr_last = 0.0;
        let mut grad_norm_max = 0.0_f64;
        for batch in crate::data::epoch_batches(
            train_set.len(),
            train_cfg.batch_size,
            &mut shuffle_rng,
        ) {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let mut total: Option<Var> = None;
            for &idx in &batch {
                let (logits, _) = bound.logits_from_tokens(
                    &train_set.sequences[idx],
                    &train_opts,
                    Some(&mut dropout_rng),
                )?;
                let row = logits.value();
                let mut best = 0usize;
                for c in 1..model.cfg.n_classes {
                    if row.at(0, c) > row.at(0, best) {
                        best = c;
                    }
                }
                if best == train_set.labels[idx] {
                    correct += 1;
                }
                let ce = logits.cross_entropy_logits(train_set.labels[idx])?;
                total = Some(match total {
                    Some(acc) => acc.add(&ce)?,
                    None => ce,
                });
            }
            let mut loss = total
                .ok_or_else(|| HktError::Training("empty batch".into()))?
                .scale(1.0 / batch.len() as f64);
            loss = add_fusion_penalties(&bound, loss, model_cfg, train_cfg)?;
            let loss_val = loss.value().data()[0];
            loss_sum += loss_val * batch.len() as f64;
            tape.backward(loss)?;
            let mut grads: BTreeMap<_, _> = bound.grads();
            let norm = clip_global_norm(&mut grads, train_cfg.clip_norm);
            grad_norm_max = grad_norm_max.max(norm);
            let lr = sched.lr(step);
            lr_last = lr;
            step += 1;
            if !loss_val.is_finite() || !norm.is_finite() {
                return Err(HktError::Training(format!(
                    "non-finite loss/gradient at epoch {epoch} step {step}: \
                     loss={loss_val} grad_norm={norm} lr={lr}"
                )));
            }
            opt.step(&mut model.params, &grads, lr);
        }
        let val_acc = evaluate(&model, val_set, opts)?;
        let simplex_dev = fusion_simplex_dev(&model, &val_set.sequences[0], opts)?;
        if val_acc > record.best_val_acc {
            record.best_val_acc = val_acc;
            record.best_epoch = epoch;
            best_params = model.params.clone();
        }
        record.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
            lr_last,
            grad_norm_max,
            simplex_dev,
        });
    }
    model.params = best_params;
    Ok(TrainOutcome { model, record })
}

/// Worst violation of the simplex constraints on the fusion weights,
/// measured on a traced forward pass of one sequence: lambda and every
/// alpha row must be non-negative and sum to one.
fn fusion_simplex_dev(model: &Model, seq: &[usize], opts: &ForwardOpts) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let trace_opts = ForwardOpts {
        collect_trace: true,
        train: false,
        ..opts.clone()
    };
    let (_, trace) = bound.logits_from_tokens(seq, &trace_opts, None)?;
    let mut dev = 0.0_f64;
    let mut check = |values: &[f64]| {
        let sum: f64 = values.iter().sum();
        dev = dev.max((sum - 1.0).abs());
        for &v in values {
            dev = dev.max((-v).max(0.0));
        }
    };
    for lt in &trace.expect("trace requested").layers {
        check(&lt.lambda);
        let alpha = &lt.alpha;
        for r in 0..alpha.rows() {
            let row: Vec<f64> = (0..alpha.cols()).map(|c| alpha.at(r, c)).collect();
            check(&row);
        }
    }
    Ok(dev)
}

/// Optional fusion-shape penalties on each layer's lambda = softmax(gamma):
/// negative entropy pushes mass onto fewer levels, the monotonicity hinge
/// prefers weights that do not increase with coarseness.
fn add_fusion_penalties<'t>(
    bound: &crate::model::BoundModel<'t>,
    mut loss: Var<'t>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<Var<'t>> {
    if tc.div_weight == 0.0 && tc.mono_weight == 0.0 {
        return Ok(loss);
    }
    for i in 0..cfg.n_layers {
        let lambda = bound
            .var(&format!("layer{i}.attn.gamma"))
            .softmax_rows(None)?;
        if tc.div_weight > 0.0 {
            let neg_entropy = lambda.mul(&lambda.ln())?.sum_all();
            loss = loss.add(&neg_entropy.scale(tc.div_weight))?;
        }
        if tc.mono_weight > 0.0 && cfg.n_levels > 1 {
            let hi = lambda.slice_cols(1, cfg.n_levels - 1);
            let lo = lambda.slice_cols(0, cfg.n_levels - 1);
            let hinge = hi.add(&lo.scale(-1.0))?.relu().sum_all();
            loss = loss.add(&hinge.scale(tc.mono_weight))?;
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests;
