use super::*;
use crate::image::{DomainTag, Spacing};
use crate::phantom::{preset, render_phantom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

// Finely sampled speckle: ~8 samples per axial and ~3 per lateral grain.
fn speckle(rows: usize, cols: usize, seed: u64) -> EnvelopeImage {
    let mut spec = preset("linear-like", rows, cols, seed).unwrap();
    spec.spacing = Spacing::new(0.05, 0.1).unwrap();
    render_phantom(&spec).unwrap()
}

fn noise(rows: usize, cols: usize, seed: u64) -> EnvelopeImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid::from_fn(rows, cols, |_, _| rng.random::<f64>());
    EnvelopeImage::new(g, Spacing::new(0.1, 0.2).unwrap(), DomainTag::Linear, 0).unwrap()
}

/// post(r, c) = pre(r − da, c − dl), wrapping.
fn circular_shift(img: &EnvelopeImage, da: isize, dl: isize) -> EnvelopeImage {
    let (rows, cols) = (img.rows() as isize, img.cols() as isize);
    let g = img.samples();
    let out = Grid::from_fn(img.rows(), img.cols(), |r, c| {
        let sr = (r as isize - da).rem_euclid(rows) as usize;
        let sc = (c as isize - dl).rem_euclid(cols) as usize;
        g.get(sr, sc)
    });
    img.with_samples(out).unwrap()
}

/// Delays every column by `shift` samples with a linear spectral phase ramp.
fn spectral_shift(img: &EnvelopeImage, shift: f64) -> EnvelopeImage {
    let (rows, cols) = img.shape();
    let fft = FftPlanner::new().plan_fft_forward(rows);
    let ifft = FftPlanner::new().plan_fft_inverse(rows);
    let mut out = Grid::zeros(rows, cols);
    for c in 0..cols {
        let mut buf: Vec<Complex<f64>> = img.samples().column(c).iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        for (k, b) in buf.iter_mut().enumerate() {
            let f = if k <= rows / 2 { k as f64 } else { k as f64 - rows as f64 };
            let f = if 2 * k == rows { 0.0 } else { f };
            *b *= Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * f * shift / rows as f64);
        }
        ifft.process(&mut buf);
        for r in 0..rows {
            out.set(r, c, (buf[r].re / rows as f64).max(0.0));
        }
    }
    img.with_samples(out).unwrap()
}

/// Nodes whose search window never touches wrapped content.
fn interior(f: &DisplacementField, rows: usize, cols: usize, cfg: &TrackingConfig, wrap: (usize, usize)) -> Vec<usize> {
    (0..f.len())
        .filter(|&i| {
            let (r, c) = f.node_position(i);
            let (ha, hl) = (cfg.kernel.0 as f64 / 2.0 + (cfg.search.0 + wrap.0) as f64, cfg.kernel.1 as f64 / 2.0 + (cfg.search.1 + wrap.1) as f64);
            r >= ha && r + ha <= rows as f64 && c >= hl && c + hl <= cols as f64
        })
        .collect()
}

#[test]
fn integer_shifts_recovered_exactly() {
    let cfg = TrackingConfig::default();
    let pre = speckle(128, 64, 1);
    for (da, dl) in [(2, 0), (-3, 1), (5, -2), (0, 3), (-8, 4)] {
        let post = circular_shift(&pre, da, dl);
        let f = track(&pre, &post, &cfg).unwrap();
        let idx = interior(&f, 128, 64, &cfg, (da.unsigned_abs(), dl.unsigned_abs()));
        assert!(!idx.is_empty());
        let hits = idx
            .iter()
            .filter(|&&i| f.valid[i] && f.axial[i] == da as f64 && f.lateral[i] == dl as f64)
            .count();
        assert!(hits as f64 >= 0.99 * idx.len() as f64, "shift ({da},{dl}): {hits}/{}", idx.len());
        if (da, dl) == (2, 0) {
            assert!(idx.iter().all(|&i| f.correlation[i] >= 0.999));
        }
    }
}

// Share of `errs` within `tol`.
fn within(errs: &[f64], tol: f64) -> f64 {
    errs.iter().filter(|e| e.abs() <= tol).count() as f64 / errs.len() as f64
}

#[test]
fn spectral_subsample_shift() {
    let cfg = TrackingConfig::default();
    let mut errs = Vec::new();
    for seed in 0..4 {
        let pre = speckle(160, 48, 20 + seed);
        let post = spectral_shift(&pre, 0.3);
        let f = track(&pre, &post, &cfg).unwrap();
        let idx = interior(&f, 160, 48, &cfg, (8, 0));
        assert!(!idx.is_empty());
        errs.extend(idx.iter().map(|&i| f.axial[i] - 0.3));
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean.abs() < 0.01, "bias {mean}");
    assert!(within(&errs, 0.05) >= 0.99, "{}", within(&errs, 0.05));
}

#[test]
fn identical_frames_give_zero_field() {
    let pre = noise(64, 40, 3);
    let f = track(&pre, &pre, &TrackingConfig::default()).unwrap();
    assert!(f.valid.iter().all(|&v| v));
    assert!(f.axial.iter().chain(&f.lateral).all(|&d| d == 0.0));
    assert!(f.correlation.iter().all(|&c| c == 1.0));
}

#[test]
fn correlation_bounded() {
    let f = track(&noise(64, 40, 4), &noise(64, 40, 5), &TrackingConfig::default()).unwrap();
    for (i, c) in f.correlation.iter().enumerate() {
        assert!(f.valid[i]);
        assert!(*c <= 1.0 + 1e-9 && *c >= -1.0);
        assert!(f.axial[i].abs() <= 8.0 && f.lateral[i].abs() <= 4.0);
    }
}

#[test]
fn flat_kernel_is_invalid() {
    let mut img = noise(64, 40, 6);
    let mut g = img.samples().clone();
    for r in 0..40 {
        for c in 0..16 {
            g.set(r, c, 0.5);
        }
    }
    img = img.with_samples(g).unwrap();
    let f = track(&img, &img, &TrackingConfig::default()).unwrap();
    assert!(!f.valid[0]);
    assert!(f.correlation[0].is_nan());
    assert!(f.valid.iter().any(|&v| v));
}

#[test]
fn rejects_bad_configs() {
    let img = noise(40, 40, 7);
    assert!(track(&img, &img, &TrackingConfig::default()).is_err());
    let cfg = TrackingConfig {
        node_step: (0, 1),
        ..TrackingConfig::default()
    };
    assert!(track(&noise(64, 40, 7), &noise(64, 40, 7), &cfg).is_err());
    assert!(track(&noise(64, 40, 7), &noise(64, 41, 7), &TrackingConfig::default()).is_err());
}

#[test]
fn symmetric_on_rigid_shift() {
    let cfg = TrackingConfig::default();
    let pre = speckle(128, 64, 30);
    for (da, dl) in [(3, -1), (-2, 2)] {
        let post = circular_shift(&pre, da, dl);
        let fwd = track(&pre, &post, &cfg).unwrap();
        let bwd = track(&post, &pre, &cfg).unwrap();
        for i in interior(&fwd, 128, 64, &cfg, (3, 2)) {
            assert!((fwd.axial[i] + bwd.axial[i]).abs() <= 0.1);
            assert!((fwd.lateral[i] + bwd.lateral[i]).abs() <= 0.1);
        }
    }
    // Sub-sample axial shift: the axial component stays antisymmetric.
    let mut ax = Vec::new();
    for seed in 0..3 {
        let pre = speckle(160, 48, 31 + seed);
        let post = spectral_shift(&pre, 1.4);
        let fwd = track(&pre, &post, &cfg).unwrap();
        let bwd = track(&post, &pre, &cfg).unwrap();
        for i in interior(&fwd, 160, 48, &cfg, (10, 0)) {
            ax.push(fwd.axial[i] + bwd.axial[i]);
        }
    }
    assert!(within(&ax, 0.1) >= 0.99, "axial {}", within(&ax, 0.1));
}

#[test]
fn zero_field_correction_is_identity() {
    let post = noise(64, 40, 9);
    let f = track(&post, &post, &TrackingConfig::default()).unwrap();
    let (out, valid) = motion_correct(&post, &f).unwrap();
    assert_eq!(out.samples(), post.samples());
    assert!(valid.iter().all(|&v| v));
}

#[test]
fn integer_shift_correction_restores_pre() {
    let cfg = TrackingConfig::default();
    let pre = speckle(128, 64, 10);
    let post = circular_shift(&pre, 3, -1);
    let f = track(&pre, &post, &cfg).unwrap();
    let (out, valid) = motion_correct(&post, &f).unwrap();
    let mask = RoiMask::interior(128, 64, (16, 4)).unwrap();
    assert!(rmsd(&pre, &out, &mask, Some(&valid)).unwrap() <= 1e-6);
    assert!(rmsd(&pre, &post, &mask, None).unwrap() > 0.01);
}

#[test]
fn rmsd_cases() {
    let a = noise(20, 20, 11);
    let mask = RoiMask::interior(20, 20, (2, 2)).unwrap();
    assert_eq!(rmsd(&a, &a, &mask, None).unwrap(), 0.0);
    let b = a.with_samples(a.samples().map(|v| v + 0.2)).unwrap();
    assert!((rmsd(&a, &b, &mask, None).unwrap() - 0.2).abs() < 1e-12);
    let none = vec![false; 400];
    assert!(rmsd(&a, &b, &mask, Some(&none)).is_err());
    assert!(RoiMask::new(2, 2, vec![false; 4]).is_err());
}

fn synthetic_field(seed: u64, noise_frac: f64) -> DisplacementField {
    let (nr, nc) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = |i: usize| ((i / nc) as f64 * 0.3).sin() + 0.05 * (i % nc) as f64;
    let axial: Vec<f64> = (0..nr * nc).map(base).collect();
    let lateral: Vec<f64> = (0..nr * nc).map(|i| 0.5 * base(i) + 0.1 * (i / nc) as f64).collect();
    let std = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let (sa, sl) = (std(&axial), std(&lateral));
    let jitter = |v: &[f64], s: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                x + noise_frac * s * n
            })
            .collect()
    };
    let axial_n = jitter(&axial, sa, &mut rng);
    let lateral_n = jitter(&lateral, sl, &mut rng);
    DisplacementField {
        node_rows: nr,
        node_cols: nc,
        origin: (15.5, 3.5),
        step: (8.0, 2.0),
        spacing: Spacing::new(0.1, 0.2).unwrap(),
        axial: axial_n,
        lateral: lateral_n,
        correlation: vec![0.9; nr * nc],
        valid: vec![true; nr * nc],
    }
}

#[test]
fn field_ssim_identical_and_noise() {
    let r = synthetic_field(0, 0.0);
    assert_eq!(field_ssim(&r, &r, None).unwrap(), (1.0, 1.0));
    let mut last = (1.0, 1.0);
    for (k, s) in [0.1, 0.3, 0.6].iter().enumerate() {
        let c = synthetic_field(100 + k as u64, *s);
        let v = field_ssim(&r, &c, None).unwrap();
        assert!(v.0 < last.0 && v.1 < last.1, "{s}: {v:?}");
        last = v;
    }
}

#[test]
fn field_ssim_constant_fields_match_formula() {
    let mut r = synthetic_field(0, 0.0);
    let mut c = r.clone();
    r.axial.iter_mut().for_each(|v| *v = 2.0);
    c.axial.iter_mut().for_each(|v| *v = -1.0);
    // Flat reference → range 1; each window: (2·μxμy + C1)/(μx² + μy² + C1) · C2/C2.
    let c1 = 1e-4;
    let want = (2.0 * 2.0 * -1.0 + c1) / (4.0 + 1.0 + c1);
    let (a, _) = field_ssim(&r, &c, None).unwrap();
    assert!((a - want).abs() < 1e-6, "{a} vs {want}");
}

#[test]
fn field_grid_mismatch() {
    let r = synthetic_field(0, 0.0);
    let mut c = r.clone();
    c.origin = (0.0, 0.0);
    assert!(field_ssim(&r, &c, None).is_err());
}

#[test]
fn field_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.usf");
    let mut f = synthetic_field(1, 0.0);
    f.valid[3] = false;
    f.correlation[3] = f64::NAN;
    write_field(&p, &f, 7).unwrap();
    let g = read_field(&p).unwrap();
    assert!(f.same_grid(&g));
    assert_eq!(g.valid, f.valid);
    for i in 0..f.len() {
        if f.valid[i] {
            assert_eq!(g.axial[i], f.axial[i] as f32 as f64);
        }
    }
}

#[test]
fn dense_field_interpolates_and_holds() {
    let mut f = synthetic_field(0, 0.0);
    f.axial = (0..f.len()).map(|i| (i / f.node_cols) as f64).collect();
    let (da, _) = f.dense(150, 40).unwrap();
    // Between node rows 0 and 1 (samples 15.5 and 23.5).
    assert!((da[19 * 40 + 10] - 3.5 / 8.0).abs() < 1e-12);
    assert_eq!(da[0], 0.0);
    assert_eq!(da[149 * 40], 15.0);
}
