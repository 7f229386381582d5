//! Minimal deterministic SVG plots: line charts and heatmaps.
//!
//! Numbers are printed with fixed precision so identical input gives
//! identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Eight-stop perceptual ramp from dark purple (low) to yellow (high).
pub const RAMP: [(u8, u8, u8); 8] = [
    (0x44, 0x01, 0x54),
    (0x46, 0x32, 0x7e),
    (0x36, 0x5c, 0x8d),
    (0x27, 0x7f, 0x8e),
    (0x1f, 0xa1, 0x87),
    (0x4a, 0xc1, 0x6d),
    (0xa0, 0xda, 0x39),
    (0xfd, 0xe7, 0x25),
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Row-major, first row at the bottom (`y_range.0`).
    pub values: Vec<Vec<f64>>,
}

pub enum Plot {
    Line(LinePlot),
    Heat(Heatmap),
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, x1, y1) = (MARGIN_L, WIDTH - MARGIN_R, HEIGHT - MARGIN_B);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, y1 + 36.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (MARGIN_T + y1) / 2.0,
        (MARGIN_T + y1) / 2.0,
        escape(y_label)
    );
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

pub fn line_plot_svg(plot: &LinePlot) -> Result<String> {
    if plot.series.is_empty() || plot.series.iter().all(|s| s.points.is_empty()) {
        bail!("cannot plot an empty series");
    }
    let tx = |x: f64| if plot.log_x { x.max(1.0).log10() } else { x };
    let finite: Vec<(f64, f64)> = plot
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if finite.is_empty() {
        bail!("series has no finite points");
    }
    let (xlo, xhi) = span(
        finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (ylo, yhi) = span(
        finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let (px0, px1, py0, py1) = (MARGIN_L, WIDTH - MARGIN_R, HEIGHT - MARGIN_B, MARGIN_T);
    let sx = |x: f64| px0 + (tx(x) - xlo) / (xhi - xlo) * (px1 - px0);
    let sy = |y: f64| py0 + (y - ylo) / (yhi - ylo) * (py1 - py0);

    let mut out = String::new();
    header(&mut out, &plot.title);
    let _ = writeln!(out, r#"<rect x="{px0:.1}" y="{py1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, px1 - px0, py0 - py1);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xlo + f * (xhi - xlo);
        let label = if plot.log_x { fmt_tick(10f64.powf(xv)) } else { fmt_tick(xv) };
        let x = px0 + f * (px1 - px0);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, py0 + 16.0);
        let yv = ylo + f * (yhi - ylo);
        let y = py0 + f * (py1 - py0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, px0 - 6.0, y + 4.0, fmt_tick(yv));
    }
    axis_labels(&mut out, &plot.x_label, &plot.y_label);
    for (k, s) in plot.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| tx(*x).is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = MARGIN_T + 16.0 + 18.0 * k as f64;
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, px1 + 10.0, px1 + 30.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, px1 + 36.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Linear interpolation on [`RAMP`] for `t` in `[0, 1]`.
pub fn ramp_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

pub fn heatmap_svg(map: &Heatmap) -> Result<String> {
    let rows = map.values.len();
    let cols = map.values.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || map.values.iter().any(|r| r.len() != cols) {
        bail!("heatmap needs a non-empty rectangular grid");
    }
    let finite: Vec<f64> = map.values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if finite.is_empty() { (0.0, 1.0) } else { span(lo, hi) };
    let (px0, px1, py0, py1) = (MARGIN_L, WIDTH - MARGIN_R, HEIGHT - MARGIN_B, MARGIN_T);
    let cw = (px1 - px0) / cols as f64;
    let ch = (py0 - py1) / rows as f64;

    let mut out = String::new();
    header(&mut out, &map.title);
    for (i, row) in map.values.iter().enumerate() {
        let y = py0 - (i + 1) as f64 * ch;
        for (j, &v) in row.iter().enumerate() {
            let x = px0 + j as f64 * cw;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                cw + 0.05,
                ch + 0.05,
                ramp_color((v - lo) / (hi - lo))
            );
        }
    }
    let _ = writeln!(out, r#"<rect x="{px0:.1}" y="{py1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, px1 - px0, py0 - py1);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = px0 + f * (px1 - px0);
        let y = py0 + f * (py1 - py0);
        let xv = map.x_range.0 + f * (map.x_range.1 - map.x_range.0);
        let yv = map.y_range.0 + f * (map.y_range.1 - map.y_range.0);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, py0 + 16.0, fmt_tick(xv));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, px0 - 6.0, y + 4.0, fmt_tick(yv));
    }
    axis_labels(&mut out, &map.x_label, &map.y_label);
    // colour bar
    let bx = px1 + 20.0;
    for k in 0..64 {
        let t = k as f64 / 63.0;
        let y = py0 - (k + 1) as f64 * (py0 - py1) / 64.0;
        let _ = writeln!(out, r#"<rect x="{bx:.1}" y="{y:.2}" width="16" height="{:.2}" fill="{}"/>"#, (py0 - py1) / 64.0 + 0.05, ramp_color(t));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, bx + 22.0, py1 + 10.0, fmt_tick(hi));
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, bx + 22.0, py0, fmt_tick(lo));
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render(plot: &Plot) -> Result<String> {
    match plot {
        Plot::Line(p) => line_plot_svg(p),
        Plot::Heat(h) => heatmap_svg(h),
    }
}

pub fn emit_svg_plot(plot: &Plot, path: &Path) -> Result<()> {
    let svg = render(plot)?;
    crate::write_file(path, svg.as_bytes()).with_context(|| format!("writing {}", path.display()))
}
