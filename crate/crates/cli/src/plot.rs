//! Minimal SVG charts. Plots are convenience artifacts; nothing downstream
//! reads them back.

use std::fmt::Write as _;
use std::path::Path;

use ccgan_core::container::write_atomic;
use ccgan_core::Result;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn frame(svg: &mut String, title: &str, x_label: &str, y_label: &str, y: (f64, f64)) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>
<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{x_label}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>
<text x="{}" y="{}" text-anchor="end">{:.3}</text>
<text x="{}" y="{}" text-anchor="end">{:.3}</text>
"#,
        W / 2.0,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0,
        MARGIN - 4.0,
        H - MARGIN,
        y.0,
        MARGIN - 4.0,
        MARGIN + 4.0,
        y.1,
    );
}

/// One polyline per named series.
pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let (x0, x1) = finite_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = finite_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut svg = String::new();
    frame(&mut svg, title, x_label, y_label, (y0, y1));
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - MARGIN - 110.0,
            MARGIN + 16.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())
}

/// Grouped bars: each group carries one value per series.
pub fn bar_plot(path: &Path, title: &str, y_label: &str, groups: &[String], series: &[(String, Vec<f64>)]) -> Result<()> {
    let (_, y1) = finite_range(series.iter().flat_map(|s| s.1.iter().copied()));
    let y0 = 0.0;
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut svg = String::new();
    frame(&mut svg, title, "", y_label, (y0, y1));
    let slot = (W - 2.0 * MARGIN) / groups.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (g, label) in groups.iter().enumerate() {
        let left = MARGIN + g as f64 * slot + slot * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                left + k as f64 * bar,
                sy(v),
                bar,
                (H - MARGIN - sy(v)).max(0.0),
                COLORS[k % COLORS.len()]
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{label}</text>"#,
            left + slot * 0.4,
            H - MARGIN + 14.0
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{}">{name}</text>"#,
            W - MARGIN - 110.0,
            MARGIN + 16.0 * k as f64,
            COLORS[k % COLORS.len()]
        );
    }
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())
}
