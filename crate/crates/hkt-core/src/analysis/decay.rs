use serde::Serialize;

use crate::error::{HktError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    /// per-level error decay rate in eps_l = eps_{l-1} (1 - delta)
    pub delta_hat: f64,
    /// RMS residual of the log-linear fit
    pub residual: f64,
    pub warning: Option<String>,
}

/// Calibrates the geometric decay rate from accuracies at increasing level
/// counts (L = 1, 2, ...). Under the linear accuracy <-> -error assumption,
/// successive accuracy improvements shrink geometrically with ratio
/// (1 - delta), so a log-linear fit on the positive improvements recovers
/// delta. Degenerate inputs produce warnings, never a panic.
pub fn decay_calibration(accuracy_by_l: &[f64]) -> Result<DecayFit> {
    if accuracy_by_l.len() < 3 {
        return Err(HktError::Config(
            "decay calibration needs accuracies for at least 3 level counts".into(),
        ));
    }
    let mut points = Vec::new(); // (level index, ln improvement)
    let mut skipped = 0usize;
    for (i, w) in accuracy_by_l.windows(2).enumerate() {
        let imp = w[1] - w[0];
        if imp > 0.0 {
            points.push((i as f64 + 1.0, imp.ln()));
        } else {
            skipped += 1;
        }
    }
    let mut warning = None;
    if skipped > 0 {
        warning = Some(format!(
            "{skipped} non-positive accuracy improvement(s) excluded from the fit"
        ));
    }
    if points.is_empty() {
        return Ok(DecayFit {
            delta_hat: 0.0,
            residual: 0.0,
            warning: Some("no positive improvements; decay undefined, reported as 0".into()),
        });
    }
    if points.len() == 1 {
        return Ok(DecayFit {
            delta_hat: 0.0,
            residual: 0.0,
            warning: Some("single positive improvement; slope undetermined".into()),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (points
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DecayFit {
        delta_hat: 1.0 - slope.exp(),
        residual,
        warning,
    })
}
