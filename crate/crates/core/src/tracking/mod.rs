//! Block-matching speckle tracking, motion correction and the RMSD /
//! displacement-SSIM scores built on them.
//!
//! Displacement convention: a node at depth `z` in the pre frame is found at
//! `z + d` in the post frame, i.e. `post(z + d) ≈ pre(z)`. Motion
//! correction therefore samples `post(z + d(z))`.

mod field;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{EnvelopeImage, Grid};
use crate::metrics::{ssim_masked, SsimParams};
use crate::par::*;

pub use field::{read_field, write_field, DisplacementField, RoiMask};

/// A node whose peak correlation is this close to 1 is an exact integer
/// match; its lag is reported without subsample refinement.
pub const EXACT_MATCH: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    /// (axial, lateral) samples.
    pub kernel: (usize, usize),
    /// ± (axial, lateral) samples.
    pub search: (usize, usize),
    /// Node pitch (axial, lateral) samples.
    pub node_step: (usize, usize),
    pub subsample_fit: bool,
    /// Track → warp passes; 1 is plain track-then-warp.
    pub iterations: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            kernel: (32, 8),
            search: (8, 4),
            node_step: (8, 2),
            subsample_fit: true,
            iterations: 1,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::Config("tracking kernel must be non-empty".into()));
        }
        if self.node_step.0 == 0 || self.node_step.1 == 0 {
            return Err(Error::Config("node spacing must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("tracking needs at least one iteration".into()));
        }
        if self.kernel.0 + 2 * self.search.0 > rows || self.kernel.1 + 2 * self.search.1 > cols {
            return Err(Error::Config(format!(
                "kernel {:?} with search {:?} does not fit a {rows}x{cols} frame",
                self.kernel, self.search
            )));
        }
        Ok(())
    }

    /// Top-left corners of the node kernels along one axis.
    fn starts(n: usize, kernel: usize, search: usize, step: usize) -> Vec<usize> {
        (0..)
            .map(|i| search + i * step)
            .take_while(|s| s + kernel + search <= n)
            .collect()
    }
}

struct NodeResult {
    axial: f64,
    lateral: f64,
    corr: f64,
    valid: bool,
}

/// Zero-normalized cross-correlation of two equally sized blocks given the
/// pre-block's centred values and energy.
fn zncc(pc: &[f64], p_energy: f64, post: &Grid, r0: usize, c0: usize, kh: usize, kw: usize) -> f64 {
    // Same summation order as the pre block, so identical blocks give
    // exactly 1.
    let mut sum = 0.0;
    for r in 0..kh {
        for v in &post.row(r0 + r)[c0..c0 + kw] {
            sum += v;
        }
    }
    let mean = sum / (kh * kw) as f64;
    let (mut cross, mut energy) = (0.0, 0.0);
    for r in 0..kh {
        let q = &post.row(r0 + r)[c0..c0 + kw];
        let p = &pc[r * kw..(r + 1) * kw];
        for (a, b) in p.iter().zip(q) {
            let d = b - mean;
            cross += a * d;
            energy += d * d;
        }
    }
    if !(energy > 0.0) {
        return f64::NAN;
    }
    (cross / (p_energy * energy).sqrt()).clamp(-1.0, 1.0)
}

/// Vertex offset of the parabola through three samples centred on a peak.
fn parabolic(m: f64, c: f64, p: f64) -> f64 {
    let den = m - 2.0 * c + p;
    if !(den < 0.0) || !m.is_finite() || !p.is_finite() {
        return 0.0;
    }
    (0.5 * (m - p) / den).clamp(-0.5, 0.5)
}

fn track_node(pre: &Grid, post: &Grid, r0: usize, c0: usize, cfg: &TrackingConfig) -> NodeResult {
    let (kh, kw) = cfg.kernel;
    let (sa, sl) = (cfg.search.0 as isize, cfg.search.1 as isize);
    let mut block = Vec::with_capacity(kh * kw);
    for r in 0..kh {
        block.extend_from_slice(&pre.row(r0 + r)[c0..c0 + kw]);
    }
    let mean = block.iter().sum::<f64>() / block.len() as f64;
    block.iter_mut().for_each(|v| *v -= mean);
    let p_energy: f64 = block.iter().map(|v| v * v).sum();
    let invalid = NodeResult {
        axial: f64::NAN,
        lateral: f64::NAN,
        corr: f64::NAN,
        valid: false,
    };
    if !(p_energy > 0.0) {
        return invalid;
    }

    let wl = (2 * sl + 1) as usize;
    let mut surface = vec![f64::NAN; (2 * sa + 1) as usize * wl];
    let mut best = (f64::NEG_INFINITY, 0isize, 0isize);
    for da in -sa..=sa {
        for dl in -sl..=sl {
            let r = (r0 as isize + da) as usize;
            let c = (c0 as isize + dl) as usize;
            let v = zncc(&block, p_energy, post, r, c, kh, kw);
            surface[(da + sa) as usize * wl + (dl + sl) as usize] = v;
            if v > best.0 {
                best = (v, da, dl);
            }
        }
    }
    let (corr, da, dl) = best;
    if !corr.is_finite() {
        return invalid;
    }
    let at = |a: isize, l: isize| surface[(a + sa) as usize * wl + (l + sl) as usize];
    let (mut fa, mut fl) = (0.0, 0.0);
    if cfg.subsample_fit && corr < EXACT_MATCH {
        if da > -sa && da < sa {
            fa = parabolic(at(da - 1, dl), corr, at(da + 1, dl));
        }
        if dl > -sl && dl < sl {
            fl = parabolic(at(da, dl - 1), corr, at(da, dl + 1));
        }
    }
    NodeResult {
        axial: da as f64 + fa,
        lateral: dl as f64 + fl,
        corr,
        valid: true,
    }
}

fn track_once(pre: &EnvelopeImage, post: &EnvelopeImage, cfg: &TrackingConfig) -> Result<DisplacementField> {
    if pre.shape() != post.shape() {
        return Err(Error::shape(pre.shape(), post.rows() * post.cols()));
    }
    let (rows, cols) = pre.shape();
    cfg.validate(rows, cols)?;
    let ra = TrackingConfig::starts(rows, cfg.kernel.0, cfg.search.0, cfg.node_step.0);
    let rl = TrackingConfig::starts(cols, cfg.kernel.1, cfg.search.1, cfg.node_step.1);
    let (pg, qg) = (pre.samples(), post.samples());
    let nodes: Vec<NodeResult> = (0..ra.len() * rl.len())
        .into_par_iter()
        .map(|i| track_node(pg, qg, ra[i / rl.len()], rl[i % rl.len()], cfg))
        .collect();
    let origin = (
        ra[0] as f64 + (cfg.kernel.0 as f64 - 1.0) / 2.0,
        rl[0] as f64 + (cfg.kernel.1 as f64 - 1.0) / 2.0,
    );
    Ok(DisplacementField {
        node_rows: ra.len(),
        node_cols: rl.len(),
        origin,
        step: (cfg.node_step.0 as f64, cfg.node_step.1 as f64),
        spacing: pre.spacing,
        axial: nodes.iter().map(|n| n.axial).collect(),
        lateral: nodes.iter().map(|n| n.lateral).collect(),
        correlation: nodes.iter().map(|n| n.corr).collect(),
        valid: nodes.iter().map(|n| n.valid).collect(),
    })
}

/// Estimates the displacement field from `pre` to `post`.
///
/// With `cfg.iterations > 1` the post frame is warped by the running
/// estimate and the residual motion is tracked and added, per pass.
pub fn track(pre: &EnvelopeImage, post: &EnvelopeImage, cfg: &TrackingConfig) -> Result<DisplacementField> {
    let mut field = track_once(pre, post, cfg)?;
    for _ in 1..cfg.iterations {
        let (warped, _) = motion_correct(post, &field)?;
        let resid = track_once(pre, &warped, cfg)?;
        for i in 0..field.axial.len() {
            if field.valid[i] && resid.valid[i] {
                field.axial[i] += resid.axial[i];
                field.lateral[i] += resid.lateral[i];
                field.correlation[i] = resid.correlation[i];
            }
        }
    }
    Ok(field)
}

/// Bilinear sample with exact pass-through at integer coordinates; `None`
/// outside the frame.
fn sample(g: &Grid, z: f64, x: f64) -> Option<f64> {
    let (rows, cols) = (g.rows() as f64, g.cols() as f64);
    if !(z >= 0.0 && x >= 0.0 && z <= rows - 1.0 && x <= cols - 1.0) {
        return None;
    }
    let (r, c) = (z.floor() as usize, x.floor() as usize);
    let (fz, fx) = (z - r as f64, x - c as f64);
    let row_at = |r: usize| -> f64 {
        let a = g.get(r, c);
        if fx == 0.0 {
            a
        } else {
            a + fx * (g.get(r, c + 1) - a)
        }
    };
    let top = row_at(r);
    if fz == 0.0 {
        return Some(top);
    }
    Some(top + fz * (row_at(r + 1) - top))
}

/// Warps `post` back onto the pre geometry. Returns the corrected frame and
/// the per-sample validity mask (false where the source fell outside the
/// frame; those samples are set to 0).
pub fn motion_correct(post: &EnvelopeImage, field: &DisplacementField) -> Result<(EnvelopeImage, Vec<bool>)> {
    let dense = field.dense(post.rows(), post.cols())?;
    let g = post.samples();
    let cols = post.cols();
    let mut out = vec![0.0; g.len()];
    let mut valid = vec![false; g.len()];
    out.par_chunks_mut(cols)
        .zip(valid.par_chunks_mut(cols))
        .enumerate()
        .for_each(|(r, (orow, vrow))| {
            for c in 0..cols {
                let i = r * cols + c;
                if let Some(v) = sample(g, r as f64 + dense.0[i], c as f64 + dense.1[i]) {
                    orow[c] = v;
                    vrow[c] = true;
                }
            }
        });
    let img = post.with_samples(Grid::new(post.rows(), cols, out)?)?;
    Ok((img, valid))
}

/// Root mean squared difference over the mask, restricted to `valid`
/// samples when given.
pub fn rmsd(pre: &EnvelopeImage, corrected: &EnvelopeImage, mask: &RoiMask, valid: Option<&[bool]>) -> Result<f64> {
    if pre.shape() != corrected.shape() {
        return Err(Error::shape(pre.shape(), corrected.rows() * corrected.cols()));
    }
    mask.check_shape(pre.rows(), pre.cols())?;
    let (a, b) = (pre.samples().as_slice(), corrected.samples().as_slice());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if mask.get(i) && valid.is_none_or(|v| v[i]) {
            sum += (a[i] - b[i]) * (a[i] - b[i]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("mask has no valid samples".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// SSIM between the axial and lateral component maps of two fields on the
/// same node grid. `node_mask` selects window centres; invalid nodes in
/// either field are excluded. The dynamic range is the reference
/// component's span (1 when it is flat).
pub fn field_ssim(reference: &DisplacementField, candidate: &DisplacementField, node_mask: Option<&[bool]>) -> Result<(f64, f64)> {
    if !reference.same_grid(candidate) {
        return Err(Error::Metric("displacement fields are on different node grids".into()));
    }
    let n = reference.axial.len();
    if let Some(m) = node_mask {
        if m.len() != n {
            return Err(Error::shape(n, m.len()));
        }
    }
    let keep: Vec<bool> = (0..n)
        .map(|i| reference.valid[i] && candidate.valid[i] && node_mask.is_none_or(|m| m[i]))
        .collect();
    let (rr, rc) = (reference.node_rows, reference.node_cols);
    let score = |a: &[f64], b: &[f64]| -> Result<f64> {
        let kept = || a.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| *v);
        let span = kept().fold(f64::NEG_INFINITY, f64::max) - kept().fold(f64::INFINITY, f64::min);
        let range = if span > 0.0 && span.is_finite() { span } else { 1.0 };
        let fill = |v: &[f64]| -> Vec<f64> { v.iter().zip(&keep).map(|(x, k)| if *k { *x } else { 0.0 }).collect() };
        let p = SsimParams { range, ..SsimParams::default() };
        ssim_masked(&Grid::new(rr, rc, fill(a))?, &Grid::new(rr, rc, fill(b))?, &keep, &p)
    };
    Ok((
        score(&reference.axial, &candidate.axial)?,
        score(&reference.lateral, &candidate.lateral)?,
    ))
}

pub const TRACKING_HEADER: &str =
    "pair,valid_nodes,mean_axial_mm,mean_lateral_mm,mean_correlation,rmsd_uncorrected,rmsd_corrected";

/// One row per consecutive frame pair, means taken over masked valid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub pair: usize,
    pub valid_nodes: usize,
    pub mean_axial_mm: f64,
    pub mean_lateral_mm: f64,
    pub mean_correlation: f64,
    pub rmsd_uncorrected: f64,
    pub rmsd_corrected: f64,
}

/// Tracks every consecutive pair and summarises it over `mask`.
pub fn track_sequence(
    frames: &[EnvelopeImage],
    cfg: &TrackingConfig,
    mask: &RoiMask,
) -> Result<(Vec<DisplacementField>, Vec<TrackingRow>)> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput("tracking needs at least two frames".into()));
    }
    let results: Vec<Result<(DisplacementField, TrackingRow)>> = (0..frames.len() - 1)
        .into_par_iter()
        .map(|k| {
            let (pre, post) = (&frames[k], &frames[k + 1]);
            let field = track(pre, post, cfg)?;
            let (corrected, valid) = motion_correct(post, &field)?;
            let node_mask = field.node_mask(mask);
            let idx: Vec<usize> = (0..field.axial.len()).filter(|&i| field.valid[i] && node_mask[i]).collect();
            let mean = |v: &[f64], scale: f64| -> f64 {
                if idx.is_empty() {
                    f64::NAN
                } else {
                    idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64 * scale
                }
            };
            let row = TrackingRow {
                pair: k,
                valid_nodes: idx.len(),
                mean_axial_mm: mean(&field.axial, field.spacing.axial),
                mean_lateral_mm: mean(&field.lateral, field.spacing.lateral),
                mean_correlation: mean(&field.correlation, 1.0),
                rmsd_uncorrected: rmsd(pre, post, mask, None)?,
                rmsd_corrected: rmsd(pre, &corrected, mask, Some(&valid))?,
            };
            Ok((field, row))
        })
        .collect();
    let mut fields = Vec::new();
    let mut rows = Vec::new();
    for r in results {
        let (f, row) = r?;
        fields.push(f);
        rows.push(row);
    }
    Ok((fields, rows))
}

#[cfg(test)]
mod tests;
