use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::EnvelopeImage;

/// Linear upsampling factor applied to a profile before crossing search.
pub const UPSAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Axial,
    Lateral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionMeasurement {
    pub target_id: String,
    pub axial_fwhm: f64,
    pub lateral_fwhm: f64,
    /// (axial, lateral) mm in the coordinates of the full frame.
    pub peak_location: (f64, f64),
}

/// Full width at half maximum of a 1-D profile, in the units of `spacing`.
///
/// The profile is upsampled ×[`UPSAMPLE`] by linear interpolation and the two
/// half-maximum crossings either side of the peak are located by linear
/// interpolation between neighbouring upsampled samples.
pub fn fwhm_profile(profile: &[f64], spacing: f64) -> Result<f64> {
    if profile.len() < 3 {
        return Err(Error::Metric(format!("profile of {} samples is too short", profile.len())));
    }
    if !(spacing > 0.0) {
        return Err(Error::Metric("profile spacing must be positive".into()));
    }
    if profile.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("FWHM profile".into()));
    }
    let peak = unique_peak(profile.iter().copied())?;
    let up = upsample(profile);
    let p = peak * UPSAMPLE;
    let half = up[p] / 2.0;
    if !(half > 0.0) {
        return Err(Error::Metric("profile peak must be positive".into()));
    }

    let mut l = p;
    while up[l] > half {
        if l == 0 {
            return Err(Error::Metric("target clipped by ROI".into()));
        }
        l -= 1;
    }
    let mut r = p;
    while up[r] > half {
        if r + 1 == up.len() {
            return Err(Error::Metric("target clipped by ROI".into()));
        }
        r += 1;
    }
    // up[l] <= half < up[l + 1] and up[r - 1] > half >= up[r].
    let left = l as f64 + (half - up[l]) / (up[l + 1] - up[l]);
    let right = r as f64 - (half - up[r]) / (up[r - 1] - up[r]);
    Ok((right - left) * spacing / UPSAMPLE as f64)
}

fn upsample(profile: &[f64]) -> Vec<f64> {
    let n = profile.len();
    let mut out = Vec::with_capacity((n - 1) * UPSAMPLE + 1);
    for i in 0..n - 1 {
        let (a, b) = (profile[i], profile[i + 1]);
        out.push(a);
        for j in 1..UPSAMPLE {
            out.push(a + (j as f64 / UPSAMPLE as f64) * (b - a));
        }
    }
    out.push(profile[n - 1]);
    out
}

fn unique_peak(values: impl Iterator<Item = f64>) -> Result<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut at = 0;
    let mut ties = 0;
    for (i, v) in values.enumerate() {
        if v > best {
            best = v;
            at = i;
            ties = 1;
        } else if v == best {
            ties += 1;
        }
    }
    if ties > 1 {
        return Err(Error::Metric("ambiguous peak".into()));
    }
    Ok(at)
}

/// FWHM through the ROI's unique maximum along `direction`, in mm.
pub fn fwhm(roi: &EnvelopeImage, direction: Direction) -> Result<f64> {
    let g = roi.samples();
    let at = unique_peak(g.as_slice().iter().copied())?;
    let (r, c) = (at / g.cols(), at % g.cols());
    match direction {
        Direction::Axial => fwhm_profile(&g.column(c), roi.spacing.axial),
        Direction::Lateral => fwhm_profile(g.row(r), roi.spacing.lateral),
    }
}

/// Crops a `size_mm` square centred on `center_mm` (clamped to the frame)
/// and measures both FWHMs. The peak location is reported in frame mm.
pub fn measure_target(
    img: &EnvelopeImage,
    target_id: &str,
    center_mm: (f64, f64),
    size_mm: (f64, f64),
) -> Result<ResolutionMeasurement> {
    let sp = img.spacing;
    let span = |center: f64, size: f64, pitch: f64, n: usize| -> Result<(usize, usize)> {
        let lo = ((center - size / 2.0) / pitch).round().max(0.0) as usize;
        let hi = (((center + size / 2.0) / pitch).round() as usize).min(n - 1);
        if hi < lo + 2 {
            return Err(Error::Metric(format!("ROI around target {target_id} is outside the frame")));
        }
        Ok((lo, hi - lo + 1))
    };
    let (r0, h) = span(center_mm.0, size_mm.0, sp.axial, img.rows())?;
    let (c0, w) = span(center_mm.1, size_mm.1, sp.lateral, img.cols())?;
    let roi = img.with_samples(img.samples().crop(r0, c0, h, w)?)?;
    let g = roi.samples();
    let at = unique_peak(g.as_slice().iter().copied())?;
    let (pr, pc) = (at / g.cols(), at % g.cols());
    Ok(ResolutionMeasurement {
        target_id: target_id.to_string(),
        axial_fwhm: fwhm(&roi, Direction::Axial)?,
        lateral_fwhm: fwhm(&roi, Direction::Lateral)?,
        peak_location: ((r0 + pr) as f64 * sp.axial, (c0 + pc) as f64 * sp.lateral),
    })
}
