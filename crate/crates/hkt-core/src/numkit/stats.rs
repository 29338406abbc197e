use super::linalg::{eigh, solve_spd};
use crate::error::{HktError, Result};
use crate::gradcore::Tensor;

/// Principal component basis fitted on rows of an [N x d] matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// [p x d]; row k is the k-th component (descending explained variance).
    pub components: Tensor,
    pub explained: Vec<f64>,
}

impl Pca {
    /// Projects rows onto the fitted basis: [N x d] -> [N x p].
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = (x.rows(), x.cols());
        let p = self.components.rows();
        if d != self.components.cols() {
            return Err(HktError::ShapeMismatch {
                op: "pca project",
                lhs: x.shape().to_vec(),
                rhs: self.components.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            for k in 0..p {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += (x.at(i, j) - self.mean[j]) * self.components.at(k, j);
                }
                out[i * p + k] = acc;
            }
        }
        Tensor::matrix(n, p, out)
    }
}

fn column_means(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += x.at(i, j);
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    mean
}

/// Sample covariance with 1/N normalisation.
fn covariance(x: &Tensor, mean: &[f64]) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            let xa = x.at(i, a) - mean[a];
            for b in a..d {
                cov[a * d + b] += xa * (x.at(i, b) - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= n as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    Tensor::matrix(d, d, cov).unwrap()
}

/// PCA via eigendecomposition of the sample covariance.
pub fn pca(x: &Tensor, p: usize) -> Result<Pca> {
    let d = x.cols();
    if p == 0 || p > d {
        return Err(HktError::Dimension(format!(
            "pca rank {} out of range for {} features",
            p, d
        )));
    }
    let mean = column_means(x);
    let cov = covariance(x, &mean);
    let eig = eigh(&cov)?;
    // eigh sorts ascending; take the top p from the back.
    let mut components = vec![0.0; p * d];
    let mut explained = vec![0.0; p];
    for k in 0..p {
        let src = d - 1 - k;
        explained[k] = eig.values[src].max(0.0);
        for j in 0..d {
            components[k * d + j] = eig.vectors.at(j, src);
        }
    }
    Ok(Pca {
        mean,
        components: Tensor::matrix(p, d, components)?,
        explained,
    })
}

/// Coefficient of determination of ridge regression fitted and evaluated on
/// the same data (an in-sample dependence measure, not a generalisation
/// estimate). Features and target are centred; result clamped to [0, 1).
pub fn ridge_r2(features: &Tensor, target: &[f64], lambda: f64) -> Result<f64> {
    let (n, p) = (features.rows(), features.cols());
    if target.len() != n {
        return Err(HktError::Dimension(format!(
            "target length {} vs {} rows",
            target.len(),
            n
        )));
    }
    let ymean = target.iter().sum::<f64>() / n as f64;
    let sst: f64 = target.iter().map(|y| (y - ymean) * (y - ymean)).sum();
    if sst <= 0.0 {
        return Err(HktError::DegenerateTarget);
    }
    let xmean = column_means(features);
    // gram = Xc^T Xc + lambda I, rhs = Xc^T yc
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let yc = target[i] - ymean;
        for a in 0..p {
            let xa = features.at(i, a) - xmean[a];
            rhs[a] += xa * yc;
            for b in a..p {
                gram[a * p + b] += xa * (features.at(i, b) - xmean[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            gram[b * p + a] = gram[a * p + b];
        }
        gram[a * p + a] += lambda;
    }
    let w = solve_spd(&Tensor::matrix(p, p, gram)?, &rhs)?;
    let mut sse = 0.0;
    for i in 0..n {
        let mut pred = 0.0;
        for a in 0..p {
            pred += (features.at(i, a) - xmean[a]) * w[a];
        }
        let r = (target[i] - ymean) - pred;
        sse += r * r;
    }
    let r2 = 1.0 - sse / sst;
    Ok(r2.clamp(0.0, 1.0 - 1e-12))
}

/// Full matrix of generalised inner products
/// d_ij = (x_i - xbar)^T S^-1 (x_j - xbar) with the 1/N covariance S.
/// The covariance is ridge-stabilised with a tiny multiple of its trace if
/// it is numerically singular.
pub fn mahalanobis_sq_all(x: &Tensor) -> Result<Tensor> {
    let (n, p) = (x.rows(), x.cols());
    let mean = column_means(x);
    let cov = covariance(x, &mean);
    let trace: f64 = (0..p).map(|i| cov.at(i, i)).sum();

    let mut centred = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            centred[i * p + j] = x.at(i, j) - mean[j];
        }
    }

    // w_i = S^-1 (x_i - xbar), column by column
    let mut solved = vec![0.0; n * p];
    let mut attempt = cov.clone();
    let mut jitter = 0.0;
    let factor_ok = loop {
        let mut ok = true;
        for i in 0..n {
            match solve_spd(&attempt, &centred[i * p..(i + 1) * p]) {
                Ok(w) => solved[i * p..(i + 1) * p].copy_from_slice(&w),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            break true;
        }
        if jitter == 0.0 {
            jitter = 1e-10 * trace.max(1e-300) / p as f64;
        } else {
            jitter *= 100.0;
        }
        if jitter > trace.max(1.0) {
            break false;
        }
        attempt = cov.clone();
        for i in 0..p {
            let v = attempt.at(i, i) + jitter;
            attempt.set(i, i, v);
        }
    };
    if !factor_ok {
        return Err(HktError::SingularCovariance);
    }

    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..p {
                acc += centred[i * p + k] * solved[j * p + k];
            }
            d[i * n + j] = acc;
        }
    }
    Tensor::matrix(n, n, d)
}

/// Classical Mardia multivariate kurtosis: b2p = N^-1 sum_i d_ii^2, and the
/// normalised kappa = b2p / (p (p + 2)) which is 1 for a Gaussian sample in
/// the large-N limit.
pub fn mardia_classical(x: &Tensor) -> Result<(f64, f64)> {
    let (n, p) = (x.rows(), x.cols());
    let d = mahalanobis_sq_all(x)?;
    let b2p = (0..n).map(|i| d.at(i, i) * d.at(i, i)).sum::<f64>() / n as f64;
    Ok((b2p, b2p / (p as f64 * (p as f64 + 2.0))))
}

/// Pairwise variant: N^-1 sum_ij d_ij^2 over the full matrix of generalised
/// inner products. By the whitening identity tr((Z Z^T)^2) = tr((Z^T Z)^2)
/// = N^2 p this equals N * p identically whenever the covariance is
/// nonsingular, independent of tail weight. Reported alongside the classical
/// statistic because some instruments quote this saturated form.
pub fn mardia_offdiag(x: &Tensor) -> Result<f64> {
    let n = x.rows();
    let d = mahalanobis_sq_all(x)?;
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / n as f64)
}
