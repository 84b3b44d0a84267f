//! Phantom ground truth checked through the metric and tracking modules.

use ccgan_core::image::Spacing;
use ccgan_core::metrics::{measure_target, nakagami_m};
use ccgan_core::phantom::{preset, render_phantom, render_sequence, MotionField, PointTarget};
use ccgan_core::tracking::{motion_correct, rmsd, track, RoiMask, TrackingConfig};

#[test]
fn homogeneous_speckle_is_rayleigh() {
    for name in ["phased-like", "linear-like"] {
        let ms: Vec<f64> = (0..20)
            .map(|seed| {
                let img = render_phantom(&preset(name, 64, 64, 1000 + seed).unwrap()).unwrap();
                nakagami_m(img.samples().as_slice()).unwrap().m
            })
            .collect();
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        assert!((mean - 1.0).abs() <= 0.05, "{name}: mean m {mean}");
    }
}

fn target_column(name: &str, depths: &[f64]) -> (ccgan_core::phantom::PhantomSpec, Vec<f64>) {
    let mut spec = preset(name, 170, 161, 9).unwrap();
    spec.spacing = Spacing::new(0.1, 0.025).unwrap();
    spec.scatterer_density = 0.0;
    spec.point_targets = depths.iter().map(|&d| PointTarget::new(d, 2.0)).collect();
    let want = depths.iter().map(|&d| spec.psf.lateral_fwhm(d)).collect();
    (spec, want)
}

#[test]
fn point_target_fwhm_tracks_psf_across_depths() {
    let depths = [2.0, 5.0, 8.0, 11.0, 14.0];
    let (spec, want) = target_column("phased-like", &depths);
    let img = render_phantom(&spec).unwrap();
    let mut last = 0.0;
    for (d, w) in depths.iter().zip(&want) {
        let m = measure_target(&img, "t", (*d, 2.0), (2.5, 4.0)).unwrap();
        assert!((m.lateral_fwhm / w - 1.0).abs() <= 0.03, "depth {d}: {} vs {w}", m.lateral_fwhm);
        assert!((m.axial_fwhm / spec.psf.axial_fwhm() - 1.0).abs() <= 0.05);
        assert!(m.lateral_fwhm >= last);
        last = m.lateral_fwhm;
    }

    let (spec, want) = target_column("linear-like", &depths);
    let img = render_phantom(&spec).unwrap();
    for (d, w) in depths.iter().zip(&want) {
        let m = measure_target(&img, "t", (*d, 2.0), (2.5, 4.0)).unwrap();
        assert!((m.lateral_fwhm / w - 1.0).abs() <= 0.03);
    }
}

#[test]
fn uniform_axial_motion_is_recovered() {
    let spec = preset("linear-like", 96, 64, 4).unwrap();
    let seq = render_sequence(&spec, &MotionField::uniform(0.5, 0.0), 3).unwrap();
    let cfg = TrackingConfig::default();
    for k in 0..2 {
        let f = track(&seq.frames[k], &seq.frames[k + 1], &cfg).unwrap();
        let mm = f.axial_mm();
        let (mut n, mut ok) = (0, 0);
        for i in 0..f.len() {
            let (r, c) = f.node_position(i);
            if r < 24.0 || r > 72.0 || c < 8.0 || c > 56.0 {
                continue;
            }
            n += 1;
            if f.valid[i] && (mm[i] - 0.5).abs() <= 0.05 {
                ok += 1;
            }
        }
        assert!(n > 0 && ok == n, "pair {k}: {ok}/{n}");
    }
}

#[test]
fn lateral_shear_slope_is_recovered() {
    let rate = 0.03;
    let spec = preset("linear-like", 128, 64, 6).unwrap();
    let motion = MotionField::lateral_shear(rate, 6.4);
    let seq = render_sequence(&spec, &motion, 2).unwrap();
    let f = track(&seq.frames[0], &seq.frames[1], &TrackingConfig::default()).unwrap();
    let lat = f.lateral_mm();
    // Least-squares slope of lateral displacement against node depth.
    let pts: Vec<(f64, f64)> = (0..f.len())
        .filter(|&i| f.valid[i])
        .map(|i| (f.node_position(i).0 * spec.spacing.axial, lat[i]))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope / rate - 1.0).abs() <= 0.10, "slope {slope} vs {rate}");

    let (corrected, valid) = motion_correct(&seq.frames[1], &f).unwrap();
    let mask = RoiMask::interior(128, 64, (20, 6)).unwrap();
    let before = rmsd(&seq.frames[0], &seq.frames[1], &mask, None).unwrap();
    let after = rmsd(&seq.frames[0], &corrected, &mask, Some(&valid)).unwrap();
    assert!(after <= 0.5 * before, "rmsd {before} -> {after}");
}
