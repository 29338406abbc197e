use serde::Serialize;

use super::leakage::measure_leakage;
use crate::error::Result;
use crate::gradcore::{Tape, Tensor};
use crate::model::{ForwardOpts, Model, ModelConfig};
use crate::numkit::Prng;

#[derive(Debug, Clone, Serialize)]
pub struct ReductionCheck {
    pub name: String,
    /// max absolute deviation across all draws and entries
    pub max_dev: f64,
    pub threshold: f64,
    /// for positive checks: dev below threshold; for negative controls:
    /// dev above it
    pub pass: bool,
}

fn reduction_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 1,
        n_levels: 1,
        stride: 2,
        n_layers: 1,
        conv_kernel: 3,
        dropout: 0.0,
        vocab_size: 4,
        n_classes: 3,
        causal: true,
        max_seq_len: 8,
    }
}

// The oracles below are independent plain-loop implementations; they share
// nothing with the tape ops except the Tensor container.

fn oracle_mha(
    x: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
    causal: bool,
) -> Tensor {
    let (t, d) = (x.rows(), x.cols());
    let dk = wq.rows();
    let proj = |w: &Tensor, i: usize, r: usize| -> f64 {
        (0..d).map(|c| w.at(r, c) * x.at(i, c)).sum()
    };
    let mut out = Tensor::zeros(vec![t, d]);
    for i in 0..t {
        let jmax = if causal { i + 1 } else { t };
        // scores for row i
        let mut row = vec![0.0; jmax];
        for (j, rv) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for r in 0..dk {
                s += proj(wq, i, r) * proj(wk, j, r);
            }
            *rv = s / (dk as f64).sqrt();
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let p: Vec<f64> = row.iter().map(|v| (v - max).exp() / denom).collect();
        // attention-weighted values, then the output projection
        let mut a = vec![0.0; d];
        for (j, &pj) in p.iter().enumerate() {
            for (c, av) in a.iter_mut().enumerate() {
                let vjc: f64 = (0..d).map(|cc| wv.at(c, cc) * x.at(j, cc)).sum();
                *av += pj * vjc;
            }
        }
        for c in 0..d {
            let mut o = 0.0;
            for (cc, &av) in a.iter().enumerate() {
                o += wo.at(c, cc) * av;
            }
            out.set(i, c, o);
        }
    }
    out
}

fn oracle_causal_conv(x: &Tensor, wv: &Tensor, wo: &Tensor, kern: &Tensor) -> Tensor {
    let (t, d) = (x.rows(), x.cols());
    let k = kern.rows();
    // values
    let mut v = Tensor::zeros(vec![t, d]);
    for i in 0..t {
        for c in 0..d {
            let val: f64 = (0..d).map(|cc| wv.at(c, cc) * x.at(i, cc)).sum();
            v.set(i, c, val);
        }
    }
    // depthwise causal conv with k-1 left zero padding
    let mut conv = Tensor::zeros(vec![t, d]);
    for m in 0..t {
        for c in 0..d {
            let mut acc = 0.0;
            for j in 0..k {
                let src = m as isize - (k as isize - 1) + j as isize;
                if src >= 0 {
                    acc += kern.at(j, c) * v.at(src as usize, c);
                }
            }
            conv.set(m, c, acc);
        }
    }
    let mut out = Tensor::zeros(vec![t, d]);
    for m in 0..t {
        for c in 0..d {
            let val: f64 = (0..d).map(|cc| wo.at(c, cc) * conv.at(m, cc)).sum();
            out.set(m, c, val);
        }
    }
    out
}

fn model_attention_output(model: &Model, x: &Tensor, opts: &ForwardOpts) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let xv = tape.constant(x.clone());
    let mut trace = None;
    Ok(bound.attention(xv, 0, opts, &mut trace)?.value())
}

/// Runs the reduction endpoints against independent oracles over `draws`
/// random weight/input pairs, plus a sabotage control that must fail.
pub fn reduction_suite(seed: u64, draws: usize) -> Result<Vec<ReductionCheck>> {
    let cfg = reduction_cfg();
    let mut prng = Prng::new(seed);
    let t = cfg.max_seq_len;
    let mut dev_mha = 0.0_f64;
    let mut dev_conv = 0.0_f64;
    let mut dev_sabotage = f64::INFINITY;
    for i in 0..draws {
        let model = Model::init(cfg.clone(), seed.wrapping_add(i as u64 + 1))?;
        let x = Tensor::randn(vec![t, cfg.d_model], 1.0, &mut prng);
        let wq = model.params.get("layer0.attn.level0.wq")?;
        let wk = model.params.get("layer0.attn.level0.wk")?;
        let wv = model.params.get("layer0.attn.level0.wv")?;
        let wo = model.params.get("layer0.attn.level0.wo")?;
        let kern = model.params.get("layer0.attn.head0.conv")?;

        // beta = 1, lambda one-hot on level 0: pure attention
        let opts = ForwardOpts {
            beta_override: Some(1.0),
            lambda_override: Some(vec![1.0]),
            ..Default::default()
        };
        let got = model_attention_output(&model, &x, &opts)?;
        let want = oracle_mha(&x, wq, wk, wv, wo, cfg.causal);
        for (a, b) in got.data().iter().zip(want.data()) {
            dev_mha = dev_mha.max((a - b).abs());
        }

        // sabotage control: the transposed-score oracle must disagree
        let want_t = oracle_mha(&x, wk, wq, wv, wo, cfg.causal);
        let mut sab = 0.0_f64;
        for (a, b) in got.data().iter().zip(want_t.data()) {
            sab = sab.max((a - b).abs());
        }
        dev_sabotage = dev_sabotage.min(sab);

        // beta = 0: pure causal depthwise conv path
        let opts = ForwardOpts {
            beta_override: Some(0.0),
            lambda_override: Some(vec![1.0]),
            ..Default::default()
        };
        let got = model_attention_output(&model, &x, &opts)?;
        let want = oracle_causal_conv(&x, wv, wo, kern);
        for (a, b) in got.data().iter().zip(want.data()) {
            dev_conv = dev_conv.max((a - b).abs());
        }
    }
    Ok(vec![
        ReductionCheck {
            name: "beta1_lambda_onehot_equals_flat_attention".into(),
            max_dev: dev_mha,
            threshold: 1e-9,
            pass: dev_mha < 1e-9,
        },
        ReductionCheck {
            name: "beta0_equals_causal_depthwise_conv".into(),
            max_dev: dev_conv,
            threshold: 1e-9,
            pass: dev_conv < 1e-9,
        },
        ReductionCheck {
            name: "negative_control_swapped_projections_disagree".into(),
            max_dev: dev_sabotage,
            threshold: 1e-3,
            pass: dev_sabotage > 1e-3,
        },
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonBoundReport {
    /// measured Lipschitz estimate of the downsampling stages
    pub c_phi: f64,
    /// C^L / (s^L - C^L), infinite when s^L <= C^L
    pub bound: f64,
    pub measured_leakage: f64,
    pub satisfied: bool,
}

/// Estimates the downsampler's Lipschitz constant on random pairs and checks
/// that measured leakage sits far below the analytic cascade bound.
pub fn epsilon_bound_check(
    model: &Model,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<EpsilonBoundReport> {
    let cfg = &model.cfg;
    let mut prng = Prng::new(seed ^ 0x5eed);
    let mut c_phi = 0.0_f64;
    for l in 1..cfg.n_levels {
        let d_prev = cfg.d_l(l - 1);
        let rows = t / cfg.stride.pow(l as u32 - 1);
        for _ in 0..trials.max(8) {
            let a = Tensor::randn(vec![rows, d_prev], 1.0, &mut prng);
            let b = Tensor::randn(vec![rows, d_prev], 1.0, &mut prng);
            let fa = apply_stage(model, l, &a)?;
            let fb = apply_stage(model, l, &b)?;
            let mut num = 0.0;
            for (x, y) in fa.data().iter().zip(fb.data()) {
                num += (x - y) * (x - y);
            }
            let mut den = 0.0;
            for (x, y) in a.data().iter().zip(b.data()) {
                den += (x - y) * (x - y);
            }
            if den > 0.0 {
                c_phi = c_phi.max((num / den).sqrt());
            }
        }
    }
    let s_l = (cfg.stride as f64).powi(cfg.n_levels as i32);
    let c_l = c_phi.powi(cfg.n_levels as i32);
    let bound = if s_l > c_l {
        c_l / (s_l - c_l)
    } else {
        f64::INFINITY
    };
    let measured_leakage = measure_leakage(model, t, trials, seed)?.max_leakage;
    Ok(EpsilonBoundReport {
        c_phi,
        bound,
        measured_leakage,
        satisfied: measured_leakage <= bound,
    })
}

fn apply_stage(model: &Model, l: usize, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let xv = tape.constant(x.clone());
    let dp = format!("layer0.attn.down{l}");
    let out = xv
        .conv1d_causal_depthwise(&bound.var(&format!("{dp}.dw")), None, model.cfg.stride)?
        .matmul(&bound.var(&format!("{dp}.pw")).transpose())?
        .add_bias(&bound.var(&format!("{dp}.pw_bias")))?
        .layernorm(
            &bound.var(&format!("{dp}.ln.gain")),
            &bound.var(&format!("{dp}.ln.bias")),
        )?
        .gelu();
    Ok(out.value())
}
