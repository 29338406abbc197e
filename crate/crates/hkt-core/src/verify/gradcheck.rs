use serde::Serialize;

use crate::error::Result;
use crate::gradcore::Tape;
use crate::model::{ForwardOpts, Model, ModelConfig};
use crate::numkit::Prng;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Central finite differences on randomly sampled parameter coordinates of a
/// full forward pass (cross-entropy loss on random tokens). Each evaluation
/// rebuilds the graph from scratch, so the check is independent of the tape.
pub fn gradient_spot_check(
    cfg: &ModelConfig,
    t: usize,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let model = Model::init(cfg.clone(), seed)?;
    let mut prng = Prng::new(seed ^ 0xfd);
    let tokens: Vec<usize> = (0..t).map(|_| prng.next_below(cfg.vocab_size)).collect();
    let target = prng.next_below(cfg.n_classes);
    let opts = ForwardOpts::default();

    let loss_of = |m: &Model| -> Result<f64> {
        let tape = Tape::new();
        let bound = m.bind(&tape);
        let (logits, _) = bound.logits_from_tokens(&tokens, &opts, None)?;
        Ok(logits.cross_entropy_logits(target)?.value().data()[0])
    };

    // analytic gradients once
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (logits, _) = bound.logits_from_tokens(&tokens, &opts, None)?;
    let loss = logits.cross_entropy_logits(target)?;
    tape.backward(loss)?;
    let grads = bound.grads();

    let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
    let h = 1e-5;
    let mut max_rel_err = 0.0_f64;
    let mut worst_param = String::new();
    for _ in 0..coords {
        let name = &names[prng.next_below(names.len())];
        let len = model.params.get(name)?.len();
        let idx = prng.next_below(len);
        let analytic = grads.get(name).map(|g| g.data()[idx]).unwrap_or(0.0);

        let mut plus = model.clone();
        plus.params.get_mut(name)?.data_mut()[idx] += h;
        let mut minus = model.clone();
        minus.params.get_mut(name)?.data_mut()[idx] -= h;
        let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);

        let denom = analytic.abs().max(numeric.abs()).max(1e-4);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_param = format!("{name}[{idx}]");
        }
    }
    Ok(GradCheckReport {
        coords_checked: coords,
        max_rel_err,
        worst_param,
    })
}
