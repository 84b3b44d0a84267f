use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NAKAGAMI_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NakagamiEstimate {
    pub m: f64,
    pub sample_count: usize,
    pub roi: Option<String>,
}

/// Moment estimator `m = E[R²]² / Var[R²]` over envelope samples `R`.
pub fn nakagami_m(samples: &[f64]) -> Result<NakagamiEstimate> {
    if samples.len() < MIN_NAKAGAMI_SAMPLES {
        return Err(Error::Metric(format!(
            "Nakagami estimate needs at least {MIN_NAKAGAMI_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Nakagami samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|r| r * r).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|r| {
            let d = r * r - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    if !(var > 0.0) {
        return Err(Error::Metric("constant ROI".into()));
    }
    Ok(NakagamiEstimate {
        m: mean * mean / var,
        sample_count: samples.len(),
        roi: None,
    })
}
