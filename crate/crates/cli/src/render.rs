//! Self-contained SVG plots and binary PGM image grids.

use std::fmt::Write as _;

use lde_core::data::Normalization;
use lde_core::DenseArray;

pub const CANVAS: f64 = 800.0;
const MARGIN: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Points,
    Line,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
    pub color: &'static str,
}

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// The first series is drawn first, so a target distribution passed first
/// ends up beneath the model's points.
pub fn svg_plot(series: &[Series], title: &str) -> String {
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let span = if hi > lo { hi - lo } else { 1.0 };
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
    let inner = CANVAS - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * inner;
    let py = |y: f64| CANVAS - MARGIN - (y - y0) / (y1 - y0) * inner;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        CANVAS / 2.0,
        escape(title)
    );
    let (left, bottom, right, top) = (MARGIN, CANVAS - MARGIN, CANVAS - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}"/></g>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            bottom + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let pts = s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite());
        match s.mark {
            Mark::Points => {
                let _ = writeln!(out, r#"<g fill="{}" fill-opacity="0.5">"#, s.color);
                for &(x, y) in pts {
                    let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, px(x), py(y));
                }
                out.push_str("</g>\n");
            }
            Mark::Line => {
                let coords: Vec<String> = pts.map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    s.color,
                    coords.join(" ")
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            right - 150.0,
            top + 16.0 * (i as f64 + 1.0),
            s.color,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tiles rows of `images` (each `h·w` values in model units) into a binary
/// PGM grid `cols` wide, with a one-pixel black border between tiles.
pub fn pgm_grid(images: &DenseArray, (h, w): (usize, usize), cols: usize, norm: Normalization) -> Vec<u8> {
    let n = images.rows();
    let cols = cols.clamp(1, n.max(1));
    let rows = n.div_ceil(cols).max(1);
    let (width, height) = (cols * (w + 1) + 1, rows * (h + 1) + 1);
    let mut pixels = vec![0u8; width * height];
    for (i, img) in images.row_iter().enumerate() {
        let (top, left) = (1 + (i / cols) * (h + 1), 1 + (i % cols) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                let v = norm.denormalize(img[y * w + x]);
                pixels[(top + y) * width + left + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}
