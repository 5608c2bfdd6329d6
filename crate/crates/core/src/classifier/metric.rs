use super::ScoreVector;
use crate::error::{Error, Result};

/// Population standard deviation of the scores, `sqrt(Σ(sᵢ − mean)² / n)`.
///
/// Returns exactly 0 when every score is equal, regardless of rounding in the
/// mean.
pub fn dispersion_metric(s: &ScoreVector) -> Result<f64> {
    let scores = &s.scores;
    if scores.is_empty() {
        return Err(Error::InvalidProblem("empty score vector".into()));
    }
    if let Some(&bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidMetric(bad));
    }
    if scores.iter().all(|&v| v == scores[0]) {
        return Ok(0.0);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}
