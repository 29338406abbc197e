use serde::Serialize;

use crate::error::{HktError, Result};
use crate::gradcore::{Tape, Tensor};
use crate::model::{ForwardOpts, Model};
use crate::numkit::Prng;

#[derive(Debug, Clone, Serialize)]
pub struct LeakageReport {
    pub seq_len: usize,
    pub trials: usize,
    pub max_leakage: f64,
    pub per_trial: Vec<f64>,
}

/// Gradient-based causality certificate: for every output position t,
/// the L2 norm of the gradient of the summed position-t logits with
/// respect to any strictly later input row must vanish.
/// Refuses models not configured as causal.
pub fn measure_leakage(model: &Model, t: usize, trials: usize, seed: u64) -> Result<LeakageReport> {
    if !model.cfg.causal {
        return Err(HktError::Refused(
            "leakage measurement requires a causal model".into(),
        ));
    }
    measure_leakage_unchecked(model, t, trials, seed)
}

/// Same measurement without the causal-config gate. Exists so the suite can
/// demonstrate that a non-causal configuration actually leaks (the negative
/// control that keeps the certificate falsifiable).
pub fn measure_leakage_unchecked(
    model: &Model,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<LeakageReport> {
    if trials == 0 {
        return Err(HktError::Config("need at least one trial".into()));
    }
    let d = model.cfg.d_model;
    let n_classes = model.cfg.n_classes;
    let mut prng = Prng::new(seed);
    let mut per_trial = Vec::with_capacity(trials);
    for _ in 0..trials {
        let input = Tensor::randn(vec![t, d], 1.0, &mut prng);
        let mut trial_max = 0.0_f64;
        for pos in 0..t.saturating_sub(1) {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let x0 = tape.leaf(input.clone());
            let logits = bound.position_logits(x0, &ForwardOpts::default())?;
            // select row `pos` by masking with a constant indicator
            let mut ind = Tensor::zeros(vec![t, n_classes]);
            for c in 0..n_classes {
                ind.set(pos, c, 1.0);
            }
            let f_t = logits.mul(&tape.constant(ind))?.sum_all();
            tape.backward(f_t)?;
            let g = x0.grad().expect("input gradient");
            for later in (pos + 1)..t {
                let norm: f64 = (0..d)
                    .map(|c| g.at(later, c) * g.at(later, c))
                    .sum::<f64>()
                    .sqrt();
                trial_max = trial_max.max(norm);
            }
        }
        per_trial.push(trial_max);
    }
    let max_leakage = per_trial.iter().cloned().fold(0.0, f64::max);
    Ok(LeakageReport {
        seq_len: t,
        trials,
        max_leakage,
        per_trial,
    })
}
