use std::path::Path;

use crate::container::{read_mask, write_mask, Container, ContainerKind};
use crate::error::{Error, Result};
use crate::image::{DomainTag, Spacing};

/// Node-grid displacement estimate. Displacements are in samples; node
/// `(i, j)` sits at frame sample `origin + (i·step.0, j·step.1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub node_rows: usize,
    pub node_cols: usize,
    pub origin: (f64, f64),
    pub step: (f64, f64),
    pub spacing: Spacing,
    pub axial: Vec<f64>,
    pub lateral: Vec<f64>,
    /// Peak ZNCC per node, NaN where invalid.
    pub correlation: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisplacementField {
    pub fn len(&self) -> usize {
        self.node_rows * self.node_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_position(&self, i: usize) -> (f64, f64) {
        let (r, c) = (i / self.node_cols, i % self.node_cols);
        (
            self.origin.0 + r as f64 * self.step.0,
            self.origin.1 + c as f64 * self.step.1,
        )
    }

    pub fn axial_mm(&self) -> Vec<f64> {
        self.axial.iter().map(|v| v * self.spacing.axial).collect()
    }

    pub fn lateral_mm(&self) -> Vec<f64> {
        self.lateral.iter().map(|v| v * self.spacing.lateral).collect()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.node_rows == other.node_rows
            && self.node_cols == other.node_cols
            && self.origin == other.origin
            && self.step == other.step
    }

    /// Node values with invalid nodes replaced by their nearest valid
    /// neighbour on the node grid.
    fn filled(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let valid: Vec<usize> = (0..self.len()).filter(|&i| self.valid[i]).collect();
        if valid.is_empty() {
            return Err(Error::Metric("displacement field has no valid nodes".into()));
        }
        let mut a = self.axial.clone();
        let mut l = self.lateral.clone();
        for i in 0..self.len() {
            if self.valid[i] {
                continue;
            }
            let (r, c) = ((i / self.node_cols) as isize, (i % self.node_cols) as isize);
            let near = *valid
                .iter()
                .min_by_key(|&&j| {
                    let (jr, jc) = ((j / self.node_cols) as isize, (j % self.node_cols) as isize);
                    (jr - r).pow(2) + (jc - c).pow(2)
                })
                .expect("non-empty");
            a[i] = self.axial[near];
            l[i] = self.lateral[near];
        }
        Ok((a, l))
    }

    /// Per-sample (axial, lateral) displacement over a `rows × cols` frame by
    /// bilinear interpolation between nodes, held constant beyond the outer
    /// nodes.
    pub fn dense(&self, rows: usize, cols: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (na, nl) = self.filled()?;
        let axis = |p: f64, o: f64, s: f64, n: usize| -> (usize, usize, f64) {
            let u = ((p - o) / s).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            (i, j, u - i as f64)
        };
        let mut da = vec![0.0; rows * cols];
        let mut dl = vec![0.0; rows * cols];
        for r in 0..rows {
            let (i0, i1, fr) = axis(r as f64, self.origin.0, self.step.0, self.node_rows);
            for c in 0..cols {
                let (j0, j1, fc) = axis(c as f64, self.origin.1, self.step.1, self.node_cols);
                let lerp2 = |v: &[f64]| {
                    let at = |i: usize, j: usize| v[i * self.node_cols + j];
                    let top = at(i0, j0) + fc * (at(i0, j1) - at(i0, j0));
                    let bot = at(i1, j0) + fc * (at(i1, j1) - at(i1, j0));
                    top + fr * (bot - top)
                };
                da[r * cols + c] = lerp2(&na);
                dl[r * cols + c] = lerp2(&nl);
            }
        }
        Ok((da, dl))
    }

    /// Samples a frame mask at the (rounded) node positions.
    pub fn node_mask(&self, mask: &RoiMask) -> Vec<bool> {
        (0..self.len())
            .map(|i| {
                let (r, c) = self.node_position(i);
                let (r, c) = (r.round() as usize, c.round() as usize);
                r < mask.rows && c < mask.cols && mask.mask[r * mask.cols + c]
            })
            .collect()
    }
}

/// Non-empty binary mask over a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
}

impl RoiMask {
    pub fn new(rows: usize, cols: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != rows * cols {
            return Err(Error::shape((rows, cols), mask.len()));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::InvalidInput("ROI mask is empty".into()));
        }
        Ok(Self { rows, cols, mask })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            mask: vec![true; rows * cols],
        }
    }

    /// Everything at least `margin` samples from the frame edge.
    pub fn interior(rows: usize, cols: usize, margin: (usize, usize)) -> Result<Self> {
        let mask = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                r >= margin.0 && r + margin.0 < rows && c >= margin.1 && c + margin.1 < cols
            })
            .collect();
        Self::new(rows, cols, mask)
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if (self.rows, self.cols) != (rows, cols) {
            return Err(Error::shape((rows, cols), self.rows * self.cols));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (mask, rows, cols) = read_mask(path)?;
        Self::new(rows, cols, mask).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path, spacing: Spacing) -> Result<()> {
        write_mask(path, &self.mask, self.rows, self.cols, spacing)
    }
}

/// Three planes: axial, lateral (samples) and correlation. Invalid nodes
/// are stored as NaN.
pub fn write_field(path: &Path, f: &DisplacementField, frame_index: u32) -> Result<()> {
    let plane = |v: &[f64]| -> Vec<f32> {
        v.iter()
            .zip(&f.valid)
            .map(|(x, ok)| if *ok { *x as f32 } else { f32::NAN })
            .collect()
    };
    Container {
        kind: ContainerKind::DisplacementField,
        domain: DomainTag::Generated,
        frame_index,
        rows: f.node_rows,
        cols: f.node_cols,
        spacing: f.spacing,
        origin: f.origin,
        step: f.step,
        planes: vec![plane(&f.axial), plane(&f.lateral), plane(&f.correlation)],
    }
    .write(path)
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let c = Container::read(path)?;
    if c.kind != ContainerKind::DisplacementField || c.planes.len() != 3 {
        return Err(Error::format(path, "not a three-plane displacement field"));
    }
    let f64s = |p: usize| -> Vec<f64> { c.planes[p].iter().map(|&v| v as f64).collect() };
    let correlation = f64s(2);
    Ok(DisplacementField {
        node_rows: c.rows,
        node_cols: c.cols,
        origin: c.origin,
        step: c.step,
        spacing: c.spacing,
        axial: f64s(0),
        lateral: f64s(1),
        valid: correlation.iter().map(|v| v.is_finite()).collect(),
        correlation,
    })
}
