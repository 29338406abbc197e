use crate::error::{HktError, Result};
use crate::gradcore::{Tape, Tensor};
use crate::model::{ForwardOpts, Model};
use crate::numkit::eigh;

use super::decompose::score_bilinear;

#[derive(Debug, Clone)]
pub struct GramReport {
    /// level-weighted kernel matrix sum_l lambda_l K^(l), N x N
    pub k_hier: Tensor,
    pub per_level: Vec<Tensor>,
    pub lambda: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    pub min_eigenvalue_hier: f64,
    /// numeric rank (eigenvalues above 1e-8 * max) of the linearised
    /// feature Gram sum_l lambda_l Phi^(l) Phi^(l)T, Phi = [W_Q z; W_K z]
    pub linear_rank: usize,
    pub rank_bound: usize,
    /// representations are rescaled by this factor if exp would overflow
    pub input_scale: f64,
}

/// Exponential-kernel Gram study on PSD-projected score matrices.
/// Level-l sample representations are the time means of the traced X^(l)
/// (layer 0), so every sample contributes one vector per level.
pub fn gram_factorisation(model: &Model, samples: &[Vec<usize>]) -> Result<GramReport> {
    if samples.is_empty() {
        return Err(HktError::Config("need at least one sample".into()));
    }
    let cfg = &model.cfg;
    let n = samples.len();
    let levels = cfg.n_levels;

    // pooled level representations per sample
    let mut reps: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); levels];
    let opts = ForwardOpts {
        collect_trace: true,
        ..Default::default()
    };
    for seq in samples {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let (_, trace) = bound.logits_from_tokens(seq, &opts, None)?;
        let lt = &trace.expect("trace requested").layers[0];
        for (l, x) in lt.level_reprs.iter().enumerate() {
            let (tl, dl) = (x.rows(), x.cols());
            let mut mean = vec![0.0; dl];
            for i in 0..tl {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += x.at(i, c) / tl as f64;
                }
            }
            reps[l].push(mean);
        }
    }
    let lambda = current_lambda(model, 0)?;

    // PSD projection of each M^(l): clip negative eigenvalues at zero
    // (nearest PSD matrix in Frobenius norm)
    let mut projected = Vec::with_capacity(levels);
    for l in 0..levels {
        let raw = score_bilinear(model, 0, l)?;
        projected.push(psd_clip(&raw)?);
    }

    // scale representations down until every exponent is safe
    let mut input_scale = 1.0_f64;
    loop {
        let mut max_abs = 0.0_f64;
        for l in 0..levels {
            for zi in &reps[l] {
                for zj in &reps[l] {
                    let v = bilinear(zi, &projected[l], zj) * input_scale * input_scale;
                    max_abs = max_abs.max(v.abs());
                }
            }
        }
        if max_abs < 500.0 {
            break;
        }
        input_scale *= 0.5;
    }

    let mut per_level = Vec::with_capacity(levels);
    let mut min_eigenvalues = Vec::with_capacity(levels);
    let mut k_hier = Tensor::zeros(vec![n, n]);
    for l in 0..levels {
        let mut k = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in 0..n {
                let v = bilinear(&reps[l][i], &projected[l], &reps[l][j])
                    * input_scale
                    * input_scale;
                k.set(i, j, v.exp());
            }
        }
        for i in 0..n {
            for j in 0..n {
                k_hier.set(i, j, k_hier.at(i, j) + lambda[l] * k.at(i, j));
            }
        }
        min_eigenvalues.push(eigh(&k)?.values[0]);
        per_level.push(k);
    }
    let min_eigenvalue_hier = eigh(&k_hier)?.values[0];

    // first-order (linearised) feature map: Phi^(l)(z) = [W_Q z; W_K z]
    let mut g_lin = Tensor::zeros(vec![n, n]);
    let mut rank_bound = 0usize;
    for l in 0..levels {
        let wq = model.params.get(&format!("layer0.attn.level{l}.wq"))?;
        let wk = model.params.get(&format!("layer0.attn.level{l}.wk"))?;
        let dkl = wq.rows();
        rank_bound += n.min(2 * dkl);
        let feats: Vec<Vec<f64>> = reps[l]
            .iter()
            .map(|z| {
                let mut f = Vec::with_capacity(2 * dkl);
                for r in 0..dkl {
                    f.push((0..z.len()).map(|c| wq.at(r, c) * z[c]).sum());
                }
                for r in 0..dkl {
                    f.push((0..z.len()).map(|c| wk.at(r, c) * z[c]).sum());
                }
                f
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum();
                g_lin.set(i, j, g_lin.at(i, j) + lambda[l] * dot);
            }
        }
    }
    let eig = eigh(&g_lin)?;
    let max = eig.values.iter().cloned().fold(0.0_f64, f64::max);
    let linear_rank = eig
        .values
        .iter()
        .filter(|&&v| v > 1e-8 * max.max(f64::MIN_POSITIVE))
        .count();

    Ok(GramReport {
        k_hier,
        per_level,
        lambda,
        min_eigenvalues,
        min_eigenvalue_hier,
        linear_rank,
        rank_bound,
        input_scale,
    })
}

fn bilinear(x: &[f64], m: &Tensor, y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, &xa) in x.iter().enumerate() {
        for (b, &yb) in y.iter().enumerate() {
            acc += xa * m.at(a, b) * yb;
        }
    }
    acc
}

/// lambda = softmax(gamma) for the given layer.
pub fn current_lambda(model: &Model, layer: usize) -> Result<Vec<f64>> {
    let gamma = model.params.get(&format!("layer{layer}.attn.gamma"))?;
    let max = gamma.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = gamma.data().iter().map(|g| (g - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Nearest PSD matrix: symmetrise, eigendecompose, clip negatives at zero.
pub fn psd_clip(m: &Tensor) -> Result<Tensor> {
    let e = eigh(m)?;
    let d = e.values.len();
    let mut out = Tensor::zeros(vec![d, d]);
    for k in 0..d {
        let v = e.values[k].max(0.0);
        if v == 0.0 {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                out.set(
                    i,
                    j,
                    out.at(i, j) + v * e.vectors.at(i, k) * e.vectors.at(j, k),
                );
            }
        }
    }
    Ok(out)
}
