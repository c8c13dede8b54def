use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMethod {
    FdrBh,
    FwerHolm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionResult {
    pub method: CorrectionMethod,
    pub alpha: f64,
    pub adjusted: Vec<f64>,
    pub reject: Vec<bool>,
}

fn check(pvals: &[f64], alpha: f64) -> Result<Vec<usize>> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "p-value {p} outside [0, 1]"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..pvals.len()).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    Ok(order)
}

fn finish(method: CorrectionMethod, alpha: f64, adjusted: Vec<f64>) -> CorrectionResult {
    let reject = adjusted.iter().map(|&p| p <= alpha).collect();
    CorrectionResult {
        method,
        alpha,
        adjusted,
        reject,
    }
}

/// Benjamini-Hochberg step-up adjustment.
pub fn bh_fdr(pvals: &[f64], alpha: f64) -> Result<CorrectionResult> {
    let order = check(pvals, alpha)?;
    let m = pvals.len() as f64;
    let mut adjusted = vec![0.0; pvals.len()];
    let mut running = 1.0f64;
    for (pos, &idx) in order.iter().enumerate().rev() {
        running = running.min(m * pvals[idx] / (pos + 1) as f64);
        // m * p / m can round below p
        adjusted[idx] = running.min(1.0).max(pvals[idx]);
    }
    Ok(finish(CorrectionMethod::FdrBh, alpha, adjusted))
}

/// Holm step-down adjustment.
pub fn holm_fwer(pvals: &[f64], alpha: f64) -> Result<CorrectionResult> {
    let order = check(pvals, alpha)?;
    let m = pvals.len();
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (pos, &idx) in order.iter().enumerate() {
        running = running.max((m - pos) as f64 * pvals[idx]);
        adjusted[idx] = running.min(1.0);
    }
    Ok(finish(CorrectionMethod::FwerHolm, alpha, adjusted))
}
