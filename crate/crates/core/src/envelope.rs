//! RF / IQ to envelope conversion.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::{DomainTag, EnvelopeImage, Grid, Spacing};
use crate::par::*;

/// Shortest axial line the spectral analytic-signal filter accepts.
pub const MIN_AXIAL_SAMPLES: usize = 8;

/// Analytic signal of one real line: negative frequencies zeroed, positive
/// ones doubled, DC and Nyquist kept.
pub fn analytic_signal(line: &[f64]) -> Vec<Complex64> {
    let n = line.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = line.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= gain;
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Envelope of beamformed RF data: magnitude of the analytic signal taken
/// along the axial dimension of every beam line (column).
pub fn envelope_detect(rf: &Grid, spacing: Spacing, domain: DomainTag) -> Result<EnvelopeImage> {
    spacing.validate()?;
    let (rows, cols) = rf.shape();
    if rows < MIN_AXIAL_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "{rows} axial samples per line, need at least {MIN_AXIAL_SAMPLES}"
        )));
    }
    if rf.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rf samples".into()));
    }
    let lines: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|c| analytic_signal(&rf.column(c)).iter().map(|z| z.norm()).collect())
        .collect();
    let out = Grid::from_fn(rows, cols, |r, c| lines[c][r]);
    EnvelopeImage::new(out, spacing, domain, 0)
}

/// Envelope of complex baseband (IQ) data.
pub fn envelope_from_iq(i: &Grid, q: &Grid, spacing: Spacing, domain: DomainTag) -> Result<EnvelopeImage> {
    if i.shape() != q.shape() {
        return Err(Error::shape(i.shape(), q.shape()));
    }
    let out = Grid::from_fn(i.rows(), i.cols(), |r, c| i.get(r, c).hypot(q.get(r, c)));
    EnvelopeImage::new(out, spacing, domain, 0)
}
