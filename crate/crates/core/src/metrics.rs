//! Objective evaluation: F0 RMSE, Pearson correlation, V/UV error rate,
//! mel-cepstral distortion.

use crate::codec::F0Contour;
use crate::error::{Result, SvsError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub f0_rmse_natural: f64,
    pub f0_rmse_note: f64,
    pub corr_natural: f64,
    pub corr_note: f64,
    pub vuv_error: f64,
    pub mcd: f64,
    pub n_frames_compared: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "f0_rmse_natural,f0_rmse_note,corr_natural,corr_note,vuv_error,mcd,n_frames";

    pub fn csv_line(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.f0_rmse_natural,
            self.f0_rmse_note,
            self.corr_natural,
            self.corr_note,
            self.vuv_error,
            self.mcd,
            self.n_frames_compared
        )
    }

    pub fn text_block(&self) -> String {
        format!(
            "f0_rmse_natural_hz: {:.4}\nf0_rmse_note_hz: {:.4}\ncorr_natural: {:.4}\n\
             corr_note: {:.4}\nvuv_error_pct: {:.4}\nmcd_db: {:.4}\nn_frames: {}\n",
            self.f0_rmse_natural,
            self.f0_rmse_note,
            self.corr_natural,
            self.corr_note,
            self.vuv_error,
            self.mcd,
            self.n_frames_compared
        )
    }
}

fn jointly_voiced(pred: &F0Contour, reference: &F0Contour) -> Result<Vec<(f64, f64)>> {
    if pred.len() != reference.len() {
        return Err(SvsError::shape("metrics", "contour length mismatch"));
    }
    Ok(pred
        .voiced
        .iter()
        .zip(&reference.voiced)
        .zip(pred.f0_hz.iter().zip(&reference.f0_hz))
        .filter(|((pv, rv), _)| **pv && **rv)
        .map(|(_, (&p, &r))| (p, r))
        .collect())
}

/// RMSE over frames voiced in both contours.
pub fn f0_rmse(pred: &F0Contour, reference: &F0Contour) -> Result<f64> {
    let pairs = jointly_voiced(pred, reference)?;
    if pairs.is_empty() {
        return Err(SvsError::Domain(
            "no jointly-voiced frames: F0 RMSE undefined".into(),
        ));
    }
    let mse: f64 =
        pairs.iter().map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}

/// Pearson correlation over jointly-voiced frames.
pub fn corr(pred: &F0Contour, reference: &F0Contour) -> Result<f64> {
    let pairs = jointly_voiced(pred, reference)?;
    if pairs.len() < 2 {
        return Err(SvsError::Domain(
            "need at least 2 jointly-voiced frames for correlation".into(),
        ));
    }
    let n = pairs.len() as f64;
    let mp: f64 = pairs.iter().map(|(p, _)| p).sum::<f64>() / n;
    let mr: f64 = pairs.iter().map(|(_, r)| r).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vr = 0.0;
    for (p, r) in &pairs {
        cov += (p - mp) * (r - mr);
        vp += (p - mp) * (p - mp);
        vr += (r - mr) * (r - mr);
    }
    if vp == 0.0 || vr == 0.0 {
        return Err(SvsError::Domain(
            "zero variance: correlation undefined".into(),
        ));
    }
    Ok(cov / (vp.sqrt() * vr.sqrt()))
}

/// Percentage of frames with mismatched V/UV flags.
pub fn vuv_error(pred: &F0Contour, reference: &F0Contour) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(SvsError::shape("vuv_error", "length mismatch"));
    }
    let wrong = pred
        .voiced
        .iter()
        .zip(&reference.voiced)
        .filter(|(a, b)| a != b)
        .count();
    Ok(100.0 * wrong as f64 / pred.len() as f64)
}

/// Mean over frames of (10/ln 10) * sqrt(2 * sum_i (c_i - c_hat_i)^2)
/// over the 40 MCCs; energy is excluded by the caller.
pub fn mcd(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(SvsError::shape("mcd", "sequence length mismatch"));
    }
    if pred.is_empty() {
        return Err(SvsError::Domain("mcd over empty sequence".into()));
    }
    let scale = 10.0 / std::f64::consts::LN_10;
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        if p.len() != r.len() {
            return Err(SvsError::shape("mcd", "frame dimension mismatch"));
        }
        let ss: f64 = p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        total += scale * (2.0 * ss).sqrt();
    }
    Ok(total / pred.len() as f64)
}
