//! Shared 2-D sample grid and the envelope frame type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of frames presented to the translation model.
pub const MODEL_GRID: usize = 256;

/// Row-major 2-D grid of reals. Rows run along depth (axial), columns along
/// the lateral direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape((rows, cols), data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Pairwise-summed mean.
    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.data) / self.data.len() as f64
    }

    /// Copies the sub-rectangle `[r0, r0+h) × [c0, c0+w)`.
    pub fn crop(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<Grid> {
        if r0 + h > self.rows || c0 + w > self.cols || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "crop {h}x{w} at ({r0},{c0}) outside {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(Grid::from_fn(h, w, |r, c| self.get(r0 + r, c0 + c)))
    }
}

pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => return 0.0,
        1 => return v[0],
        2 => return v[0] + v[1],
        _ => {}
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Which acquisition domain a frame belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Phased,
    Linear,
    Generated,
}

impl DomainTag {
    pub fn code(self) -> u8 {
        match self {
            DomainTag::Phased => 0,
            DomainTag::Linear => 1,
            DomainTag::Generated => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DomainTag::Phased),
            1 => Some(DomainTag::Linear),
            2 => Some(DomainTag::Generated),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Phased => "phased",
            DomainTag::Linear => "linear",
            DomainTag::Generated => "generated",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "phased" => Ok(DomainTag::Phased),
            "linear" => Ok(DomainTag::Linear),
            "generated" => Ok(DomainTag::Generated),
            other => Err(Error::InvalidInput(format!("unknown domain tag {other:?}"))),
        }
    }
}

/// Physical sample pitch in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub axial: f64,
    pub lateral: f64,
}

impl Spacing {
    pub fn new(axial: f64, lateral: f64) -> Result<Self> {
        let s = Self { axial, lateral };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.axial > 0.0 && self.lateral > 0.0) || !self.axial.is_finite() || !self.lateral.is_finite() {
            return Err(Error::InvalidInput(format!(
                "spacings must be positive, got axial {} lateral {}",
                self.axial, self.lateral
            )));
        }
        Ok(())
    }
}

/// Non-negative envelope samples with geometry and provenance.
///
/// Pre-scan-conversion phased-array frames keep their rectangular beam-line
/// grid; `spacing.lateral` then holds the beam-line pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeImage {
    samples: Grid,
    pub spacing: Spacing,
    pub domain: DomainTag,
    pub frame_index: u32,
}

impl EnvelopeImage {
    pub fn new(samples: Grid, spacing: Spacing, domain: DomainTag, frame_index: u32) -> Result<Self> {
        spacing.validate()?;
        if let Some(bad) = samples.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "envelope samples must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            samples,
            spacing,
            domain,
            frame_index,
        })
    }

    pub fn samples(&self) -> &Grid {
        &self.samples
    }

    pub fn into_samples(self) -> Grid {
        self.samples
    }

    pub fn rows(&self) -> usize {
        self.samples.rows()
    }

    pub fn cols(&self) -> usize {
        self.samples.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples.shape()
    }

    /// Same metadata, new samples. Samples are re-validated.
    pub fn with_samples(&self, samples: Grid) -> Result<Self> {
        Self::new(samples, self.spacing, self.domain, self.frame_index)
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    pub fn is_model_shaped(&self) -> bool {
        self.shape() == (MODEL_GRID, MODEL_GRID)
    }
}

/// Divides by the frame maximum so samples land in `[0, 1]` with max 1.
pub fn normalize(img: &EnvelopeImage) -> Result<EnvelopeImage> {
    let peak = img.samples.max();
    if !(peak > 0.0) {
        return Err(Error::DegenerateFrame(
            "all-zero frame cannot be normalized".into(),
        ));
    }
    let mut out = img.clone();
    if peak == 1.0 {
        return Ok(out);
    }
    for v in out.samples.as_mut_slice() {
        *v /= peak;
    }
    Ok(out)
}

/// Bilinear resampling onto a `rows × cols` grid.
///
/// Corner samples map onto corner samples, and spacings are rescaled so the
/// distance between the first and last sample centres is unchanged.
pub fn resample(img: &EnvelopeImage, rows: usize, cols: usize) -> Result<EnvelopeImage> {
    img.spacing.validate()?;
    let (h, w) = img.shape();
    if h < 16 || w < 16 {
        return Err(Error::InvalidInput(format!(
            "frame {h}x{w} is below the 16x16 resampling minimum"
        )));
    }
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidInput(format!("target grid {rows}x{cols} too small")));
    }
    if (h, w) == (rows, cols) {
        return Ok(img.clone());
    }
    let src = &img.samples;
    let row_pos: Vec<(usize, f64)> = (0..rows).map(|i| lerp_index(i, rows, h)).collect();
    let col_pos: Vec<(usize, f64)> = (0..cols).map(|j| lerp_index(j, cols, w)).collect();
    let grid = Grid::from_fn(rows, cols, |i, j| {
        let (r0, tr) = row_pos[i];
        let (c0, tc) = col_pos[j];
        let top = lerp(src.get(r0, c0), src.get(r0, c0 + 1), tc);
        let bottom = lerp(src.get(r0 + 1, c0), src.get(r0 + 1, c0 + 1), tc);
        lerp(top, bottom, tr)
    });
    let spacing = Spacing {
        axial: img.spacing.axial * (h - 1) as f64 / (rows - 1) as f64,
        lateral: img.spacing.lateral * (w - 1) as f64 / (cols - 1) as f64,
    };
    EnvelopeImage::new(grid, spacing, img.domain, img.frame_index)
}

/// Resamples onto the 256×256 grid the model consumes.
pub fn resample_to_model_grid(img: &EnvelopeImage) -> Result<EnvelopeImage> {
    resample(img, MODEL_GRID, MODEL_GRID)
}

// `a + t (b - a)` returns `a` exactly when `a == b`, which keeps constant
// frames constant to the bit.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn lerp_index(i: usize, n_out: usize, n_in: usize) -> (usize, f64) {
    let pos = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
    let base = (pos.floor() as usize).min(n_in - 2);
    (base, pos - base as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> EnvelopeImage {
        EnvelopeImage::new(
            Grid::from_fn(rows, cols, f),
            Spacing::new(0.1, 0.2).unwrap(),
            DomainTag::Phased,
            0,
        )
        .unwrap()
    }

    #[test]
    fn rejects_negative_samples() {
        let g = Grid::new(1, 2, vec![0.5, -0.1]).unwrap();
        assert!(EnvelopeImage::new(g, Spacing::new(1.0, 1.0).unwrap(), DomainTag::Linear, 0).is_err());
    }

    #[test]
    fn normalize_small_example() {
        let img = frame(1, 3, |_, c| 2.0 * c as f64);
        let n = normalize(&img).unwrap();
        assert_eq!(n.samples().as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_all_zero_is_degenerate() {
        let img = frame(4, 4, |_, _| 0.0);
        assert!(matches!(normalize(&img), Err(Error::DegenerateFrame(_))));
    }

    #[test]
    fn normalize_is_idempotent_on_normalized_frame() {
        let img = frame(8, 8, |r, c| ((r * 7 + c * 3) % 11) as f64 + 0.5);
        let once = normalize(&img).unwrap();
        let twice = normalize(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let img = frame(256, 256, |r, c| ((r * 31 + c * 17) % 97) as f64 / 97.0);
        let out = resample_to_model_grid(&img).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let img = frame(128, 128, |_, _| 0.37);
        let out = resample_to_model_grid(&img).unwrap();
        assert!(out.samples().as_slice().iter().all(|&v| v == 0.37));
        assert_eq!(out.samples().mean(), img.samples().mean());
        assert_eq!(out.samples().mean(), 0.37);
    }

    #[test]
    fn resample_axial_ramp_keeps_endpoints_and_linearity() {
        let img = frame(100, 40, |r, _| r as f64 / 99.0 * 3.0);
        let out = resample_to_model_grid(&img).unwrap();
        let g = out.samples();
        assert!((g.get(0, 0) - 0.0).abs() <= 1e-6);
        assert!((g.get(255, 10) - 3.0).abs() <= 1e-6);
        // the bilinear interpolant of a ramp is the ramp itself
        for r in 0..256 {
            let expected = 3.0 * r as f64 / 255.0;
            assert!((g.get(r, 100) - expected).abs() <= 1e-9);
        }
        // physical extent between first and last samples is unchanged
        assert!((out.spacing.axial * 255.0 - 0.1 * 99.0).abs() < 1e-12);
        assert!((out.spacing.lateral * 255.0 - 0.2 * 39.0).abs() < 1e-12);
    }

    #[test]
    fn resample_rejects_tiny_or_bad_spacing() {
        let img = frame(8, 8, |_, _| 1.0);
        assert!(resample_to_model_grid(&img).is_err());
        let mut ok = frame(16, 16, |_, _| 1.0);
        ok.spacing.axial = 0.0;
        assert!(resample_to_model_grid(&ok).is_err());
    }
}
