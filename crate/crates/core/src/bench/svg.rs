//! Minimal log-log scatter plot with fitted lines, written as plain SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

use super::sweep::{BenchRecord, ScalingFit};

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn render_svg(records: &[BenchRecord], fits: &[ScalingFit]) -> String {
    let pts: Vec<&BenchRecord> = records.iter().filter(|r| !r.oom && r.wall_ms_mean > 0.0).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lx = |n: f64| n.ln();
    let (x0, x1) = bounds(pts.iter().map(|r| lx(r.n as f64)));
    let (y0, y1) = bounds(pts.iter().map(|r| r.wall_ms_mean.ln()));
    let px = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} V{b} H{r}" stroke="black" fill="none"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">sequence length n (log)</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">wall ms (log)</text>"#,
        H / 2.0,
        H / 2.0
    );
    let mut ns: Vec<usize> = pts.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    for n in ns {
        let x = px(lx(n as f64));
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{n}</text>"#, H - PAD + 16.0);
    }

    let mut mechs = Vec::new();
    for r in &pts {
        if !mechs.contains(&r.mechanism) {
            mechs.push(r.mechanism);
        }
    }
    for (i, m) in mechs.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for r in pts.iter().filter(|r| r.mechanism == *m) {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#,
                px(lx(r.n as f64)),
                py(r.wall_ms_mean.ln())
            );
        }
        let mut label = m.to_string();
        if let Some(f) = fits.iter().find(|f| f.mechanism == *m) {
            let ends = [x0, x1].map(|x| (px(x), py(f.intercept + f.slope * x)));
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                ends[0].0, ends[0].1, ends[1].0, ends[1].1
            );
            let _ = write!(label, " (slope {:.2})", f.slope);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#,
            PAD + 10.0,
            PAD + 16.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

pub fn write_svg(records: &[BenchRecord], fits: &[ScalingFit], path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(records, fits))?;
    Ok(())
}
