use serde::Serialize;

use crate::data::Dataset;
use crate::error::{HktError, Result};
use crate::gradcore::{Tape, Tensor};
use crate::model::{ForwardOpts, Model};
use crate::numkit::{mardia_classical, mardia_offdiag, pca, ridge_r2};

#[derive(Debug, Clone)]
pub struct InfoConfig {
    /// PCA dimensionality for the score features
    pub pca_dims: usize,
    /// side of the trailing block of S^(l) used as the per-sample feature
    /// (the trailing block is content-bearing under left padding)
    pub block: usize,
    pub ridge: f64,
    /// reference approximation error of the flat single-scale model
    pub eps0: f64,
}

impl Default for InfoConfig {
    fn default() -> Self {
        InfoConfig {
            pca_dims: 10,
            block: 8,
            ridge: 1e-3,
            eps0: 0.5,
        }
    }
}

/// Mutual-information surrogate estimates from one feature/target pairing.
#[derive(Debug, Clone, Serialize)]
pub struct BoundEstimate {
    pub rho2: f64,
    /// Mardia kurtosis normalised by p(p+2), ~1 for Gaussian data
    pub kappa_classical: f64,
    /// full-pairs variant; saturates at N/(p+2) by the whitening identity
    pub kappa_saturated: f64,
    /// -0.5 ln(1 - rho2)
    pub gaussian_bound: f64,
    /// gaussian + (kappa_classical - 1)/2 * rho2
    pub nongaussian_bound: f64,
    pub nongaussian_bound_saturated: f64,
}

/// PCA-project the features, ridge-estimate rho^2 against the target, and
/// measure kurtosis of the joint (projected features, target) sample.
pub fn estimate_bounds(
    features: &Tensor,
    target: &[f64],
    p: usize,
    ridge: f64,
) -> Result<BoundEstimate> {
    let n = features.rows();
    if n != target.len() {
        return Err(HktError::Config("feature/target length mismatch".into()));
    }
    let p_eff = p.min(features.cols()).min(n.saturating_sub(2));
    if p_eff == 0 || n <= p_eff + 1 {
        return Err(HktError::Config(format!(
            "need more samples than PCA dims: n={n}, p={p}"
        )));
    }
    let proj = pca(features, p_eff)?.project(features)?;
    let rho2 = ridge_r2(&proj, target, ridge)?;

    let mut joint = Tensor::zeros(vec![n, p_eff + 1]);
    for i in 0..n {
        for c in 0..p_eff {
            joint.set(i, c, proj.at(i, c));
        }
        joint.set(i, p_eff, target[i]);
    }
    let (_, kappa_classical) = mardia_classical(&joint)?;
    let pj = (p_eff + 1) as f64;
    let kappa_saturated = mardia_offdiag(&joint)? / (pj * (pj + 2.0));

    let gaussian_bound = -0.5 * (1.0 - rho2).ln();
    Ok(BoundEstimate {
        rho2,
        kappa_classical,
        kappa_saturated,
        gaussian_bound,
        nongaussian_bound: gaussian_bound + 0.5 * (kappa_classical - 1.0) * rho2,
        nongaussian_bound_saturated: gaussian_bound + 0.5 * (kappa_saturated - 1.0) * rho2,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelInfo {
    pub level: usize,
    pub t_l: usize,
    pub feat_dim: usize,
    #[serde(flatten)]
    pub bounds: BoundEstimate,
    /// net error reduction: [sigma_f^2 (rho_l^2 - rho_{l-1}^2)
    ///  - (kappa_l - 1) rho_l^2] / (2 eps0), with rho_0^2 := 0
    pub delta_ng: f64,
    /// optimal level weight, propto max(0, numerator) / T_l^2, normalised
    pub lambda_star: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfoReport {
    /// scalar target: the trained head's logit for the true class
    pub target: &'static str,
    pub n: usize,
    pub sigma_f2: f64,
    pub eps0: f64,
    pub levels: Vec<LevelInfo>,
}

/// Per-level information-bound estimates for a trained model on a dataset.
pub fn info_bounds(model: &Model, data: &Dataset, icfg: &InfoConfig) -> Result<InfoReport> {
    if data.is_empty() {
        return Err(HktError::Config("empty dataset".into()));
    }
    let cfg = &model.cfg;
    let n = data.len();
    let t = data.sequences[0].len();
    let opts = ForwardOpts {
        collect_trace: true,
        ..Default::default()
    };

    let mut target = Vec::with_capacity(n);
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); cfg.n_levels];
    for (seq, &label) in data.sequences.iter().zip(&data.labels) {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let (logits, trace) = bound.logits_from_tokens(seq, &opts, None)?;
        target.push(logits.value().at(0, label));
        let lt = &trace.expect("trace requested").layers[0];
        for (l, s) in lt.level_scores.iter().enumerate() {
            let tl = s.rows();
            let q = icfg.block.min(tl);
            let start = tl - q;
            for i in start..tl {
                for j in start..tl {
                    feats[l].push(s.at(i, j));
                }
            }
        }
    }
    let mean = target.iter().sum::<f64>() / n as f64;
    let sigma_f2 = target.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if sigma_f2 < 1e-12 {
        return Err(HktError::DegenerateTarget);
    }

    let mut levels = Vec::with_capacity(cfg.n_levels);
    let mut prev_rho2 = 0.0;
    let mut numerators = Vec::with_capacity(cfg.n_levels);
    for l in 0..cfg.n_levels {
        let feat_dim = feats[l].len() / n;
        let fmat = Tensor::matrix(n, feat_dim, feats[l].clone())?;
        let bounds = estimate_bounds(&fmat, &target, icfg.pca_dims, icfg.ridge)?;
        let kappa_term = (bounds.kappa_classical - 1.0) * bounds.rho2;
        let delta_ng =
            (sigma_f2 * (bounds.rho2 - prev_rho2) - kappa_term) / (2.0 * icfg.eps0);
        numerators.push((bounds.rho2 - prev_rho2 - kappa_term).max(0.0));
        prev_rho2 = bounds.rho2;
        levels.push(LevelInfo {
            level: l,
            t_l: cfg.t_l(t, l),
            feat_dim,
            bounds,
            delta_ng,
            lambda_star: 0.0,
        });
    }
    // lambda* propto numerator / T_l^2; uniform fallback when all vanish
    let mut weights: Vec<f64> = levels
        .iter()
        .zip(&numerators)
        .map(|(li, &num)| num / (li.t_l as f64 * li.t_l as f64))
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    } else {
        weights = vec![1.0 / cfg.n_levels as f64; cfg.n_levels];
    }
    for (li, w) in levels.iter_mut().zip(weights) {
        li.lambda_star = w;
    }

    Ok(InfoReport {
        target: "true-class logit",
        n,
        sigma_f2,
        eps0: icfg.eps0,
        levels,
    })
}
