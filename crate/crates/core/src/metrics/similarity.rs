use crate::error::{Error, Result};
use crate::image::{EnvelopeImage, Grid};

/// Local-window SSIM parameters. Defaults: 11×11 Gaussian window, σ = 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    /// Window actually used on a `rows × cols` grid: the configured size, or
    /// the largest odd size that fits when the grid is smaller.
    pub fn effective_window(&self, rows: usize, cols: usize) -> usize {
        let fit = rows.min(cols);
        if fit >= self.window {
            self.window
        } else if fit % 2 == 1 {
            fit
        } else {
            fit.saturating_sub(1)
        }
    }
}

fn kernel(win: usize, sigma: f64) -> Vec<f64> {
    let h = (win / 2) as f64;
    let k: Vec<f64> = (0..win)
        .map(|i| {
            let d = i as f64 - h;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a row-major field.
fn filter_valid(data: &[f64], rows: usize, cols: usize, k: &[f64]) -> Vec<f64> {
    let win = k.len();
    let (or, oc) = (rows - win + 1, cols - win + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        for c in 0..oc {
            tmp[r * oc + c] = k.iter().zip(&row[c..c + win]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for (j, kv) in k.iter().enumerate() {
            let src = &tmp[(r + j) * oc..(r + j + 1) * oc];
            for (o, s) in out[r * oc..(r + 1) * oc].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

/// SSIM index map over all full windows; entry (i, j) belongs to the window
/// centred at (i + w/2, j + w/2).
pub fn ssim_map(x: &Grid, y: &Grid, p: &SsimParams) -> Result<Grid> {
    if x.shape() != y.shape() {
        return Err(Error::shape(x.shape(), y.len()));
    }
    let (rows, cols) = x.shape();
    let win = p.effective_window(rows, cols);
    if win == 0 {
        return Err(Error::Metric(format!("SSIM needs a non-empty grid, got {rows}x{cols}")));
    }
    if !(p.range > 0.0) {
        return Err(Error::Metric("SSIM dynamic range must be positive".into()));
    }
    let k = kernel(win, p.sigma);
    let xs = x.as_slice();
    let ys = y.as_slice();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { xs.iter().zip(ys).map(|(a, b)| f(*a, *b)).collect() };
    let mx = filter_valid(xs, rows, cols, &k);
    let my = filter_valid(ys, rows, cols, &k);
    let mxx = filter_valid(&prod(&|a, _| a * a), rows, cols, &k);
    let myy = filter_valid(&prod(&|_, b| b * b), rows, cols, &k);
    let mxy = filter_valid(&prod(&|a, b| a * b), rows, cols, &k);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let vals = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect();
    Grid::new(rows - win + 1, cols - win + 1, vals)
}

/// Mean SSIM over all full windows.
pub fn ssim_grid(x: &Grid, y: &Grid, p: &SsimParams) -> Result<f64> {
    Ok(ssim_map(x, y, p)?.mean())
}

/// Mean SSIM over windows whose centre lies inside `mask`.
pub fn ssim_masked(x: &Grid, y: &Grid, mask: &[bool], p: &SsimParams) -> Result<f64> {
    if mask.len() != x.len() {
        return Err(Error::shape(x.shape(), mask.len()));
    }
    let map = ssim_map(x, y, p)?;
    let h = (x.rows() - map.rows()) / 2;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..map.rows() {
        for j in 0..map.cols() {
            if mask[(i + h) * x.cols() + j + h] {
                sum += map.get(i, j);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Metric("mask holds no full SSIM window".into()));
    }
    Ok(sum / n as f64)
}

/// SSIM with dynamic range 1, for normalized frames.
pub fn ssim(x: &EnvelopeImage, y: &EnvelopeImage) -> Result<f64> {
    ssim_grid(x.samples(), y.samples(), &SsimParams::default())
}

/// `10·log10(L²/MSE)`; `+∞` when the grids are identical.
pub fn psnr_grid(x: &Grid, y: &Grid, range: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape(x.shape(), y.len()));
    }
    let mse = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

pub fn psnr(x: &EnvelopeImage, y: &EnvelopeImage) -> Result<f64> {
    psnr_grid(x.samples(), y.samples(), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Deterministic textured frame, reproducible outside Rust.
    fn frame(n: usize) -> Grid {
        Grid::from_fn(n, n, |r, c| {
            let (r, c) = (r as f64, c as f64);
            0.5 + 0.3 * (0.7 * r + 0.02 * c * c).sin() + 0.15 * (0.45 * c - 0.1 * r).cos()
        })
    }

    // Direct 2-D window sums, no separability.
    fn reference(x: &Grid, y: &Grid) -> f64 {
        let win = 11usize;
        let mut w = vec![0.0; win * win];
        let mut s = 0.0;
        for i in 0..win {
            for j in 0..win {
                let (a, b) = (i as f64 - 5.0, j as f64 - 5.0);
                w[i * win + j] = (-(a * a + b * b) / 4.5).exp();
                s += w[i * win + j];
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut count = 0.0;
        for r in 0..=x.rows() - win {
            for c in 0..=x.cols() - win {
                let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let wt = w[i * win + j] / s;
                        let (a, b) = (x.get(r + i, c + j), y.get(r + i, c + j));
                        ux += wt * a;
                        uy += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let (vx, vy, cv) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                total += (2.0 * ux * uy + c1) * (2.0 * cv + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn identity_and_symmetry() {
        let x = frame(32);
        let y = x.map(|v| v * v);
        let p = SsimParams::default();
        assert_eq!(ssim_grid(&x, &x, &p).unwrap(), 1.0);
        assert_eq!(ssim_grid(&x, &y, &p).unwrap(), ssim_grid(&y, &x, &p).unwrap());
    }

    #[test]
    fn inverted_frame_negative() {
        let x = frame(32);
        let y = x.map(|v| 1.0 - v);
        assert!(ssim_grid(&x, &y, &SsimParams::default()).unwrap() < 0.0);
    }

    #[test]
    fn half_scaled_matches_reference() {
        let x = frame(32);
        let y = x.map(|v| 0.5 * v);
        let got = ssim_grid(&x, &y, &SsimParams::default()).unwrap();
        assert!((got - reference(&x, &y)).abs() < 1e-6);
        // scikit-image structural_similarity, gaussian_weights, population covariance
        assert!((got - 0.642_846_885_740_951_8).abs() < 1e-6);
        let inv = ssim_grid(&x, &x.map(|v| 1.0 - v), &SsimParams::default()).unwrap();
        assert!((inv + 0.885_087_363_354_290_3).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim_grid(&frame(12), &frame(13), &SsimParams::default()).is_err());
    }

    #[test]
    fn small_grid_window_shrinks() {
        let p = SsimParams::default();
        assert_eq!(p.effective_window(6, 9), 5);
        assert_eq!(p.effective_window(7, 30), 7);
        let x = frame(6);
        assert_eq!(ssim_grid(&x, &x, &p).unwrap(), 1.0);
    }

    #[test]
    fn psnr_formula() {
        let x = Grid::zeros(10, 10);
        let y = Grid::filled(10, 10, 1e-3f64.sqrt());
        assert!((psnr_grid(&x, &y, 1.0).unwrap() - 30.0).abs() < 1e-9);
        let y = Grid::filled(10, 10, 2.34e-4f64.sqrt());
        assert!((psnr_grid(&x, &y, 1.0).unwrap() - 36.3).abs() < 0.05);
        assert_eq!(psnr_grid(&x, &x, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let x = Grid::zeros(4, 4);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let v = psnr_grid(&x, &Grid::filled(4, 4, 0.01 * k as f64), 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }
}
