use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use super::decompose::{DecompositionReport, PsdEntry};
use super::gram::GramReport;
use super::info::InfoReport;
use crate::error::{HktError, Result};

/// One JSON object per line.
pub fn jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        let line = serde_json::to_string(r)
            .map_err(|e| HktError::Config(format!("serialisation: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn decomposition_csv(report: &DecompositionReport) -> String {
    let mut out = String::from(
        "layer,level,frob_ms,frob_ma,ratio,fraction_negative,min_eigenvalue,\
         directional_energy,identity_max_dev,energy_form_dev\n",
    );
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.layer,
            e.level,
            e.frob_ms,
            e.frob_ma,
            e.ratio,
            e.fraction_negative,
            e.min_eigenvalue,
            e.directional_energy,
            e.identity_max_dev,
            e.energy_form_dev
        );
    }
    out
}

pub fn decomposition_jsonl(report: &DecompositionReport) -> Result<String> {
    let rows: Vec<_> = report
        .entries
        .iter()
        .map(|e| {
            json!({
                "layer": e.layer,
                "level": e.level,
                "frob_ms": e.frob_ms,
                "frob_ma": e.frob_ma,
                "ratio": e.ratio,
                "eigenvalues": e.eigenvalues,
                "fraction_negative": e.fraction_negative,
                "min_eigenvalue": e.min_eigenvalue,
                "directional_energy": e.directional_energy,
                "identity_max_dev": e.identity_max_dev,
                "energy_form_dev": e.energy_form_dev,
            })
        })
        .collect();
    jsonl(&rows)
}

pub fn psd_csv(entries: &[PsdEntry]) -> String {
    let mut out = String::from("layer,level,fraction_negative,min_eigenvalue\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.layer, e.level, e.fraction_negative, e.min_eigenvalue
        );
    }
    out
}

pub fn info_csv(report: &InfoReport) -> String {
    let mut out = String::from(
        "level,t_l,feat_dim,rho2,kappa_classical,kappa_saturated,gaussian_bound,\
         nongaussian_bound,nongaussian_bound_saturated,delta_ng,lambda_star\n",
    );
    for l in &report.levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            l.level,
            l.t_l,
            l.feat_dim,
            l.bounds.rho2,
            l.bounds.kappa_classical,
            l.bounds.kappa_saturated,
            l.bounds.gaussian_bound,
            l.bounds.nongaussian_bound,
            l.bounds.nongaussian_bound_saturated,
            l.delta_ng,
            l.lambda_star
        );
    }
    out
}

pub fn gram_csv(report: &GramReport) -> String {
    let mut out = String::from("level,lambda,min_eigenvalue\n");
    for (l, (lam, min)) in report
        .lambda
        .iter()
        .zip(&report.min_eigenvalues)
        .enumerate()
    {
        let _ = writeln!(out, "{l},{lam},{min}");
    }
    let _ = writeln!(
        out,
        "hier,,{}\nlinear_rank,{},bound {}\ninput_scale,{},",
        report.min_eigenvalue_hier, report.linear_rank, report.rank_bound, report.input_scale
    );
    out
}
