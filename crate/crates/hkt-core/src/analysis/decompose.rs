use serde::Serialize;

use crate::error::Result;
use crate::gradcore::{Tape, Tensor};
use crate::model::{ForwardOpts, Model};
use crate::numkit::eigh;

/// Score-matrix algebra for one (layer, level): M = W_Q^T W_K split into its
/// symmetric part M_s (kernel-like) and antisymmetric part M_a (directional),
/// with the reciprocity identities checked on an actual forward pass.
#[derive(Debug, Clone)]
pub struct LevelDecomposition {
    pub layer: usize,
    pub level: usize,
    pub m: Tensor,
    pub m_s: Tensor,
    pub m_a: Tensor,
    pub frob_ms: f64,
    pub frob_ma: f64,
    /// frob_ms / frob_ma; infinite when the antisymmetric part vanishes
    pub ratio: f64,
    /// spectrum of M_s, ascending
    pub eigenvalues: Vec<f64>,
    pub fraction_negative: f64,
    pub min_eigenvalue: f64,
    /// directional energy sum_{i != j} (S_ij - S_ji)^2 on the probe
    pub directional_energy: f64,
    /// max deviation of S_ij +- S_ji from the 2 x^T M_{s,a} y / sqrt(dk) forms
    pub identity_max_dev: f64,
    /// |energy from score differences - energy from the M_a form|
    pub energy_form_dev: f64,
}

#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub entries: Vec<LevelDecomposition>,
}

/// Splits M so that m_s + m_a == m bitwise: the parts are computed from the
/// raw product and M itself is defined as their sum (the re-rounding is far
/// below every tolerance used downstream).
pub fn split_symmetric(raw: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n = raw.rows();
    let mut m_s = Tensor::zeros(vec![n, n]);
    let mut m_a = Tensor::zeros(vec![n, n]);
    let mut m = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            let s = 0.5 * (raw.at(i, j) + raw.at(j, i));
            let a = 0.5 * (raw.at(i, j) - raw.at(j, i));
            m_s.set(i, j, s);
            m_a.set(i, j, a);
            m.set(i, j, s + a);
        }
    }
    (m, m_s, m_a)
}

/// Eigen summary of the symmetrised part of `m` (no rescaling applied).
pub fn psd_summary(m: &Tensor) -> Result<(Vec<f64>, f64, f64)> {
    let e = eigh(m)?;
    let n = e.values.len() as f64;
    // strictly negative beyond round-off, so Gram-form zero modes don't count
    let scale = e.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let neg = e
        .values
        .iter()
        .filter(|&&v| v < -1e-12 * scale.max(f64::MIN_POSITIVE))
        .count() as f64;
    let min = e.values.first().copied().unwrap_or(0.0);
    Ok((e.values, neg / n, min))
}

#[derive(Debug, Clone, Serialize)]
pub struct PsdEntry {
    pub layer: usize,
    pub level: usize,
    pub eigenvalues: Vec<f64>,
    pub fraction_negative: f64,
    pub min_eigenvalue: f64,
}

/// Spectrum of (M + M^T) / (2 sqrt(d_k^(l))) for every (layer, level).
pub fn psd_audit(model: &Model) -> Result<Vec<PsdEntry>> {
    let cfg = &model.cfg;
    let mut out = Vec::new();
    for layer in 0..cfg.n_layers {
        for level in 0..cfg.n_levels {
            let raw = score_bilinear(model, layer, level)?;
            let scale = 1.0 / (2.0 * (cfg.d_k_l(level) as f64).sqrt());
            let d = raw.rows();
            let mut scaled = Tensor::zeros(vec![d, d]);
            for i in 0..d {
                for j in 0..d {
                    scaled.set(i, j, raw.at(i, j) * scale);
                }
            }
            let (eigenvalues, fraction_negative, min_eigenvalue) = psd_summary(&scaled)?;
            out.push(PsdEntry {
                layer,
                level,
                eigenvalues,
                fraction_negative,
                min_eigenvalue,
            });
        }
    }
    Ok(out)
}

/// M^(l) = W_Q^T W_K, shape d_l x d_l.
pub fn score_bilinear(model: &Model, layer: usize, level: usize) -> Result<Tensor> {
    let wq = model
        .params
        .get(&format!("layer{layer}.attn.level{level}.wq"))?;
    let wk = model
        .params
        .get(&format!("layer{layer}.attn.level{level}.wk"))?;
    wq.transpose().matmul(wk)
}

/// Runs the probe through the encoder, then checks the reciprocity and
/// directionality identities of each level's scores against the M_s / M_a
/// bilinear forms evaluated on the traced level representations.
pub fn decompose_scores(model: &Model, probe: &Tensor) -> Result<DecompositionReport> {
    let cfg = &model.cfg;
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let opts = ForwardOpts {
        collect_trace: true,
        ..Default::default()
    };
    let x0 = tape.constant(probe.clone());
    let (_, trace) = bound.encode(x0, &opts, None)?;
    let trace = trace.expect("trace requested");

    let mut entries = Vec::new();
    for (layer, lt) in trace.layers.iter().enumerate() {
        for level in 0..cfg.n_levels {
            let raw = score_bilinear(model, layer, level)?;
            let (m, m_s, m_a) = split_symmetric(&raw);
            let frob_ms = m_s.frob_norm();
            let frob_ma = m_a.frob_norm();
            let dk = (cfg.d_k_l(level) as f64).sqrt();
            let x = &lt.level_reprs[level];
            let s = &lt.level_scores[level];
            let tl = x.rows();
            let bilinear = |mm: &Tensor, i: usize, j: usize| -> f64 {
                let mut acc = 0.0;
                for a in 0..mm.rows() {
                    for b in 0..mm.cols() {
                        acc += x.at(i, a) * mm.at(a, b) * x.at(j, b);
                    }
                }
                acc
            };
            let mut identity_max_dev = 0.0_f64;
            let mut energy_scores = 0.0;
            let mut energy_form = 0.0;
            for i in 0..tl {
                for j in 0..tl {
                    if i == j {
                        continue;
                    }
                    let sum = s.at(i, j) + s.at(j, i);
                    let diff = s.at(i, j) - s.at(j, i);
                    let sum_form = 2.0 * bilinear(&m_s, i, j) / dk;
                    let diff_form = 2.0 * bilinear(&m_a, i, j) / dk;
                    identity_max_dev = identity_max_dev
                        .max((sum - sum_form).abs())
                        .max((diff - diff_form).abs());
                    energy_scores += diff * diff;
                    energy_form += diff_form * diff_form;
                }
            }
            let (eigenvalues, fraction_negative, min_eigenvalue) = psd_summary(&m_s)?;
            entries.push(LevelDecomposition {
                layer,
                level,
                frob_ms,
                frob_ma,
                ratio: if frob_ma > 0.0 {
                    frob_ms / frob_ma
                } else {
                    f64::INFINITY
                },
                eigenvalues,
                fraction_negative,
                min_eigenvalue,
                directional_energy: energy_scores,
                identity_max_dev,
                energy_form_dev: (energy_scores - energy_form).abs(),
                m,
                m_s,
                m_a,
            });
        }
    }
    Ok(DecompositionReport { entries })
}
