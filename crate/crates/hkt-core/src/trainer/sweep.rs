use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, train, TrainConfig};
use crate::data::Splits;
use crate::error::Result;
use crate::model::{ForwardOpts, ModelConfig};
use crate::verify::count_ops;

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// extra (n_levels, stride) configurations beyond the ablation rows
    pub grid: Vec<(usize, usize)>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            grid: vec![(2, 2), (4, 2), (2, 3)],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub name: String,
    pub n_levels: usize,
    pub stride: usize,
    /// score-entry overhead vs flat attention at this sequence length
    pub overhead_ratio: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

/// Trains and evaluates the full model, its mechanism ablations, and a
/// (levels, stride) grid. A failing row is recorded and the sweep continues.
pub fn ablation_sweep(
    base_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    spec: &SweepSpec,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    let mut jobs: Vec<(String, ModelConfig, ForwardOpts)> = vec![
        ("full".into(), base_cfg.clone(), ForwardOpts::default()),
        (
            "flat_l1".into(),
            ModelConfig {
                n_levels: 1,
                ..base_cfg.clone()
            },
            ForwardOpts::default(),
        ),
        (
            "beta1_attention_only".into(),
            base_cfg.clone(),
            ForwardOpts {
                beta_override: Some(1.0),
                ..Default::default()
            },
        ),
        (
            "beta0_conv_only".into(),
            base_cfg.clone(),
            ForwardOpts {
                beta_override: Some(0.0),
                ..Default::default()
            },
        ),
        (
            "alpha_uniform".into(),
            base_cfg.clone(),
            ForwardOpts {
                alpha_uniform: true,
                ..Default::default()
            },
        ),
    ];
    for &(levels, stride) in &spec.grid {
        if levels == base_cfg.n_levels && stride == base_cfg.stride {
            continue;
        }
        jobs.push((
            format!("grid_l{levels}_s{stride}"),
            ModelConfig {
                n_levels: levels,
                stride,
                ..base_cfg.clone()
            },
            ForwardOpts::default(),
        ));
    }

    let t = splits
        .train
        .sequences
        .first()
        .map(|s| s.len())
        .unwrap_or(base_cfg.max_seq_len);
    for (name, cfg, opts) in jobs {
        let overhead_ratio = count_ops(&cfg, t)
            .map(|c| c.ratio_measured)
            .unwrap_or(f64::NAN);
        let mut row = SweepRow {
            name,
            n_levels: cfg.n_levels,
            stride: cfg.stride,
            overhead_ratio,
            val_acc: None,
            test_acc: None,
            error: None,
        };
        match run_one(&cfg, train_cfg, splits, &opts) {
            Ok((val, test)) => {
                row.val_acc = Some(val);
                row.test_acc = Some(test);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    rows
}

fn run_one(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    splits: &Splits,
    opts: &ForwardOpts,
) -> Result<(f64, f64)> {
    let outcome = train(cfg, tc, &splits.train, &splits.val, opts)?;
    let test = evaluate(&outcome.model, &splits.test, opts)?;
    Ok((outcome.record.best_val_acc, test))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("name,n_levels,stride,overhead_ratio,val_acc,test_acc,error\n");
    for r in rows {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name,
            r.n_levels,
            r.stride,
            r.overhead_ratio,
            fmt(r.val_acc),
            fmt(r.test_acc),
            r.error.clone().unwrap_or_default()
        );
    }
    out
}
