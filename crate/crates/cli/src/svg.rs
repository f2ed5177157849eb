//! Tiny deterministic SVG backend for the four report figure kinds.
//!
//! Every function is a pure map from parsed data to the final SVG text, so
//! repeated runs produce byte-identical files. Inputs with a header but no
//! rows yield a frame with axes and no marks.

use crate::CliError;
use std::collections::BTreeSet;
use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 60.0; // left margin, room for y tick labels
const MR: f64 = 20.0;
const MT: f64 = 20.0;
const MB: f64 = 45.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Data-space window mapped onto the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    /// Ranges padded by 5%, with degenerate and empty ranges widened to
    /// something drawable.
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let (x0, x1) = padded_range(xs);
        let (y0, y1) = padded_range(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn sx(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn sy(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Pixel coordinate with fixed precision, for byte-stable output.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.3}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open_svg(out: &mut String) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    out.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
}

fn close_svg(out: &mut String) {
    out.push_str("</svg>\n");
}

fn axes(out: &mut String, frame: &Frame) {
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        px(ML),
        px(H - MB),
        px(W - MR),
        px(H - MB)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        px(ML),
        px(MT),
        px(ML),
        px(H - MB)
    );
    for i in 0..5 {
        let f = i as f64 / 4.0;
        let xv = frame.x0 + f * (frame.x1 - frame.x0);
        let yv = frame.y0 + f * (frame.y1 - frame.y0);
        let xp = frame.sx(xv);
        let yp = frame.sy(yv);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>",
            px(xp),
            px(H - MB),
            px(H - MB + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            px(xp),
            px(H - MB + 18.0),
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"black\"/>",
            px(yp),
            px(ML - 5.0),
            px(ML)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            px(ML - 8.0),
            px(yp + 4.0),
            tick_label(yv)
        );
    }
}

/// 2-D point cloud.
pub fn scatter(points: &[(f64, f64)]) -> String {
    let frame = Frame::new(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame);
    for &(x, y) in points {
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>",
            px(frame.sx(x)),
            px(frame.sy(y))
        );
    }
    close_svg(&mut out);
    out
}

/// One polyline per distinct series value; rows are `(x, series, y)`.
pub fn line(rows: &[(f64, f64, f64)]) -> String {
    let mut series: Vec<f64> = rows.iter().map(|r| r.1).collect();
    series.sort_by(f64::total_cmp);
    series.dedup_by(|a, b| a.to_bits() == b.to_bits());

    let frame = Frame::new(rows.iter().map(|r| r.0), rows.iter().map(|r| r.2));
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame);
    for (i, &key) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.1.to_bits() == key.to_bits())
            .map(|r| format!("{},{}", px(frame.sx(r.0)), px(frame.sy(r.2))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            pts.join(" "),
            color
        );
        // Legend swatches down the top-right corner.
        let ly = MT + 14.0 * i as f64 + 10.0;
        let _ = writeln!(
            out,
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"{3}\" stroke-width=\"1.5\"/>",
            px(ly),
            px(W - MR - 70.0),
            px(W - MR - 50.0),
            color
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>",
            px(W - MR - 45.0),
            px(ly + 4.0),
            tick_label(key)
        );
    }
    close_svg(&mut out);
    out
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = p * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// One box-and-whisker per group (median, quartiles, min/max whiskers).
pub fn boxplot(groups: &[(String, Vec<f64>)]) -> String {
    let frame = Frame::new(
        std::iter::empty(),
        groups.iter().flat_map(|g| g.1.iter().copied()),
    );
    let mut out = String::new();
    open_svg(&mut out);
    // The x axis is categorical; keep the numeric y axis only.
    let yonly = Frame { x0: 0.0, x1: 1.0, ..frame };
    axes_y_only(&mut out, &yonly);
    let slot = (W - ML - MR) / groups.len().max(1) as f64;
    for (i, (label, values)) in groups.iter().enumerate() {
        let cx = ML + (i as f64 + 0.5) * slot;
        let half = (slot * 0.3).min(40.0);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            px(cx),
            px(H - MB + 18.0),
            escape(label)
        );
        if values.is_empty() {
            continue;
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        let q1 = quantile(&sorted, 0.25);
        let med = quantile(&sorted, 0.5);
        let q3 = quantile(&sorted, 0.75);
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>",
            px(cx),
            px(yonly.sy(min)),
            px(yonly.sy(max))
        );
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#aec7e8\" stroke=\"black\"/>",
            px(cx - half),
            px(yonly.sy(q3)),
            px(2.0 * half),
            px((yonly.sy(q1) - yonly.sy(q3)).max(0.5))
        );
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{2}\" x2=\"{}\" y2=\"{2}\" stroke=\"black\" stroke-width=\"1.5\"/>",
            px(cx - half),
            px(cx + half),
            px(yonly.sy(med))
        );
    }
    close_svg(&mut out);
    out
}

fn axes_y_only(out: &mut String, frame: &Frame) {
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        px(ML),
        px(H - MB),
        px(W - MR),
        px(H - MB)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        px(ML),
        px(MT),
        px(ML),
        px(H - MB)
    );
    for i in 0..5 {
        let yv = frame.y0 + i as f64 / 4.0 * (frame.y1 - frame.y0);
        let yp = frame.sy(yv);
        let _ = writeln!(
            out,
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"black\"/>",
            px(yp),
            px(ML - 5.0),
            px(ML)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            px(ML - 8.0),
            px(yp + 4.0),
            tick_label(yv)
        );
    }
}

/// Greyscale heat map over a complete `z1 × z2` grid; the smallest value
/// renders white, the largest black. Rows are `(z1, z2, value)`.
pub fn latent_field(rows: &[(f64, f64, f64)]) -> Result<String, CliError> {
    let mut out = String::new();
    if rows.is_empty() {
        let frame = Frame::new(std::iter::empty(), std::iter::empty());
        open_svg(&mut out);
        axes(&mut out, &frame);
        close_svg(&mut out);
        return Ok(out);
    }

    let mut z1s: Vec<f64> = rows.iter().map(|r| r.0).collect();
    z1s.sort_by(f64::total_cmp);
    z1s.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let mut z2s: Vec<f64> = rows.iter().map(|r| r.1).collect();
    z2s.sort_by(f64::total_cmp);
    z2s.dedup_by(|a, b| a.to_bits() == b.to_bits());

    let mut seen = BTreeSet::new();
    for r in rows {
        if !seen.insert((r.0.to_bits(), r.1.to_bits())) {
            return Err(CliError::User(format!(
                "latent-field input repeats the cell ({}, {})",
                r.0, r.1
            )));
        }
    }
    if rows.len() != z1s.len() * z2s.len() {
        return Err(CliError::User(format!(
            "latent-field input is not a complete grid: {} distinct z1 × {} distinct z2 needs {} rows, got {}",
            z1s.len(),
            z2s.len(),
            z1s.len() * z2s.len(),
            rows.len()
        )));
    }

    let lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(z1s.iter().copied(), z2s.iter().copied());
    let cw = (W - ML - MR) / z1s.len() as f64;
    let ch = (H - MT - MB) / z2s.len() as f64;
    let index = |sorted: &[f64], v: f64| {
        sorted.partition_point(|&s| s.total_cmp(&v) == std::cmp::Ordering::Less)
    };

    open_svg(&mut out);
    for &(z1, z2, v) in rows {
        let i = index(&z1s, z1);
        let j = index(&z2s, z2);
        let ratio = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let level = 255 - (255.0 * ratio).round() as u32;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#{level:02x}{level:02x}{level:02x}\"/>",
            px(ML + i as f64 * cw),
            px(H - MB - (j + 1) as f64 * ch),
            px(cw),
            px(ch)
        );
    }
    axes(&mut out, &frame);
    close_svg(&mut out);
    Ok(out)
}
