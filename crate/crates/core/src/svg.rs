//! Minimal SVG 1.1 figures: point clouds with map arrows, and signal overlays.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Mat;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: &'a Mat,
}

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..2 {
            if !(lo[k] < hi[k]) {
                let c = if lo[k].is_finite() { lo[k] } else { 0.0 };
                lo[k] = c - 1.0;
                hi[k] = c + 1.0;
            }
        }
        Frame { lo, hi }
    }

    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.lo[0]) / (self.hi[0] - self.lo[0]) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.lo[1]) / (self.hi[1] - self.lo[1]) * (H - 2.0 * PAD)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = 38.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="4" fill="{color}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - 130.0,
            W - 120.0,
            y + 4.0,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: &Path, body: String) -> Result<()> {
    std::fs::write(path, body).map_err(Error::from)
}

/// Scatter of 2D point sets. `arrows` pairs rows of two sets (source, mapped)
/// and draws a segment for the first `max_arrows` pairs.
pub fn scatter_2d(
    path: &Path,
    title: &str,
    series: &[Series<'_>],
    arrows: Option<(&Mat, &Mat, usize)>,
) -> Result<()> {
    if series.iter().any(|s| s.points.cols() != 2) {
        return Err(Error::invalid("scatter_2d needs 2D points"));
    }
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.row_iter().map(|r| [r[0], r[1]])));
    let mut out = String::new();
    header(&mut out, title);
    if let Some((from, to, max)) = arrows {
        out.push_str(r##"<g stroke="#888888" stroke-width="0.6" fill="none">"##);
        out.push('\n');
        for (a, b) in from.row_iter().zip(to.row_iter()).take(max) {
            let _ = writeln!(
                out,
                r#"<path d="M{:.2} {:.2} L{:.2} {:.2}"/>"#,
                frame.x(a[0]),
                frame.y(a[1]),
                frame.x(b[0]),
                frame.y(b[1])
            );
        }
        out.push_str("</g>\n");
    }
    for s in series {
        let _ = writeln!(out, r#"<g fill="{}" fill-opacity="0.55">"#, s.color);
        for r in s.points.row_iter() {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, frame.x(r[0]), frame.y(r[1]));
        }
        out.push_str("</g>\n");
    }
    legend(&mut out, &series.iter().map(|s| (s.label, s.color)).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    write(path, out)
}

/// Overlay 1D signals as polylines, one per (label, color, values).
pub fn overlay_1d(path: &Path, title: &str, signals: &[(&str, &str, &[f64])]) -> Result<()> {
    let longest = signals.iter().map(|s| s.2.len()).max().unwrap_or(0);
    if longest == 0 {
        return Err(Error::invalid("overlay_1d needs a nonempty signal"));
    }
    let frame = Frame::fit(signals.iter().flat_map(|s| {
        let n = s.2.len().max(2) - 1;
        s.2.iter().enumerate().map(move |(i, &v)| [i as f64 / n as f64, v])
    }));
    let mut out = String::new();
    header(&mut out, title);
    for (_, color, values) in signals {
        let n = values.len().max(2) - 1;
        let mut d = String::new();
        for (i, &v) in values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.2} {:.2} ", frame.x(i as f64 / n as f64), frame.y(v));
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, d.trim_end());
    }
    legend(&mut out, &signals.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    write(path, out)
}
