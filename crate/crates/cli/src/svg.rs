//! Line charts with a shaded min/max band per series. Output depends only on
//! the input values, so reruns give identical bytes.

use std::fmt::Write;

use crate::aggregate::AggregatePoint;
use crate::error::CliError;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const DASHES: [&str; 4] = ["", "6 3", "2 2", "8 3 2 3"];
const MARGIN: (f64, f64, f64, f64) = (72.0, 24.0, 36.0, 52.0); // left, right, top, bottom

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<AggregatePoint>,
}

#[derive(Clone, Debug)]
pub struct Axes {
    pub log_y: bool,
    pub width: f64,
    pub height: f64,
    pub title: Option<String>,
    pub x_label: String,
    pub y_label: String,
}

impl Default for Axes {
    fn default() -> Self {
        Self {
            log_y: true,
            width: 720.0,
            height: 440.0,
            title: None,
            x_label: "scaled queries".into(),
            y_label: "hypergradient norm".into(),
        }
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    axes: Axes,
    floor: f64,
}

impl Frame {
    fn ty(&self, v: f64) -> f64 {
        if self.axes.log_y {
            v.max(self.floor).log10()
        } else {
            v
        }
    }

    fn px(&self, q: f64) -> f64 {
        let (l, r, _, _) = MARGIN;
        l + (q - self.x0) / (self.x1 - self.x0) * (self.axes.width - l - r)
    }

    fn py(&self, v: f64) -> f64 {
        let (_, _, t, b) = MARGIN;
        let h = self.axes.height - t - b;
        t + h - (self.ty(v) - self.y0) / (self.y1 - self.y0) * h
    }
}

fn padded(lo: f64, hi: f64, pad: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - pad, hi + pad)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

pub fn render(series: &[Series], axes: &Axes) -> Result<String, CliError> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(CliError::Failed("nothing to plot: no curves".into()));
    }
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let qmin = pts().map(|p| p.scaled_queries).min().unwrap_or(0) as f64;
    let qmax = pts().map(|p| p.scaled_queries).max().unwrap_or(0) as f64;
    let floor = pts()
        .flat_map(|p| [p.min_norm, p.mean_norm, p.max_norm])
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1e-12 };
    let mut frame = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
        axes: axes.clone(),
        floor,
    };
    let ys: Vec<f64> = pts().flat_map(|p| [p.min_norm, p.max_norm]).filter(|v| v.is_finite()).map(|v| frame.ty(v)).collect();
    let ylo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let yhi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (frame.x0, frame.x1) = padded(qmin, qmax, 1.0);
    (frame.y0, frame.y1) = if ylo.is_finite() { padded(ylo, yhi, 0.5) } else { (0.0, 1.0) };

    let (w, h) = (axes.width, axes.height);
    let (l, r, t, b) = MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    if let Some(title) = &axes.title {
        let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(title));
    }
    // axes and ticks
    let _ = writeln!(s, r#"<g stroke="black" fill="none"><polyline points="{l:.2},{t:.2} {l:.2},{:.2} {:.2},{:.2}"/></g>"#, h - b, w - r, h - b);
    for i in 0..=4 {
        let q = frame.x0 + (frame.x1 - frame.x0) * i as f64 / 4.0;
        let x = frame.px(q);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, h - b, h - b + 5.0, h - b + 18.0, tick_label(q));
    }
    for i in 0..=4 {
        let yv = frame.y0 + (frame.y1 - frame.y0) * i as f64 / 4.0;
        let y = t + (h - t - b) * (1.0 - i as f64 / 4.0);
        let label = if axes.log_y { tick_label(10f64.powf(yv)) } else { tick_label(yv) };
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, l - 5.0, l - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, l + (w - l - r) / 2.0, h - 12.0, esc(&axes.x_label));
    let ylab = if axes.log_y { format!("{} (log)", axes.y_label) } else { axes.y_label.clone() };
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#, t + (h - t - b) / 2.0, t + (h - t - b) / 2.0, esc(&ylab));

    for (i, se) in series.iter().enumerate() {
        if se.points.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let dash = DASHES[i % DASHES.len()];
        let band: Vec<String> = se
            .points
            .iter()
            .map(|p| (p.scaled_queries, p.min_norm))
            .chain(se.points.iter().rev().map(|p| (p.scaled_queries, p.max_norm)))
            .map(|(q, v)| format!("{:.2},{:.2}", frame.px(q as f64), frame.py(v)))
            .collect();
        let _ = writeln!(s, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = se.points.iter().map(|p| format!("{:.2},{:.2}", frame.px(p.scaled_queries as f64), frame.py(p.mean_norm))).collect();
        let dash_attr = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        let _ = writeln!(s, r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>"#, line.join(" "));
        // legend entry
        let ly = t + 10.0 + 18.0 * i as f64;
        let lx = w - r - 180.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash_attr}/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            esc(&se.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
