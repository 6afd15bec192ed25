//! Minimal SVG output: lines, polygons, circles and text in data coordinates,
//! plus the map overlay and the small charts written by the CLI.

use crate::geometry::{PaddedPolygon, Pose2, Vec2};
use std::fmt::Write as _;

pub struct Svg {
    width: f64,
    height: f64,
    lo: Vec2,
    hi: Vec2,
    body: String,
}

impl Svg {
    /// Canvas of `width × height` pixels showing the data box `[lo, hi]`; y points up.
    pub fn new(width: f64, height: f64, lo: Vec2, hi: Vec2) -> Self {
        let hi = Vec2::new(hi.x.max(lo.x + 1e-9), hi.y.max(lo.y + 1e-9));
        Self { width, height, lo, hi, body: String::new() }
    }

    /// Equal-aspect canvas around a data box with a relative margin.
    pub fn fit(width: f64, lo: Vec2, hi: Vec2, margin: f64) -> Self {
        let pad = (hi - lo) * margin;
        let (lo, hi) = (lo - pad, hi + pad);
        let span = hi - lo;
        let height = (width * span.y / span.x.max(1e-9)).clamp(50.0, 4.0 * width);
        Self::new(width, height, lo, hi)
    }

    fn px(&self, p: Vec2) -> (f64, f64) {
        let sx = (p.x - self.lo.x) / (self.hi.x - self.lo.x) * self.width;
        let sy = self.height - (p.y - self.lo.y) / (self.hi.y - self.lo.y) * self.height;
        (sx, sy)
    }

    fn points_attr(&self, pts: &[Vec2]) -> String {
        let mut s = String::new();
        for p in pts {
            let (x, y) = self.px(*p);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }

    pub fn polyline(&mut self, pts: &[Vec2], stroke: &str, width: f64) {
        let pts = self.points_attr(pts);
        let _ = writeln!(self.body, r#"<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#);
    }

    pub fn polygon(&mut self, pts: &[Vec2], stroke: &str, fill: &str, opacity: f64) {
        let pts = self.points_attr(pts);
        let _ = writeln!(
            self.body,
            r#"<polygon points="{pts}" fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    pub fn circle(&mut self, c: Vec2, r_px: f64, fill: &str) {
        let (x, y) = self.px(c);
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r_px}" fill="{fill}"/>"#);
    }

    pub fn rect(&mut self, lo: Vec2, hi: Vec2, fill: &str) {
        let (x0, y0) = self.px(Vec2::new(lo.x, hi.y));
        let (x1, y1) = self.px(Vec2::new(hi.x, lo.y));
        let _ = writeln!(
            self.body,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            (x1 - x0).max(0.0),
            (y1 - y0).max(0.0)
        );
    }

    pub fn text(&mut self, at: Vec2, size: f64, content: &str) {
        let (x, y) = self.px(at);
        let escaped = content.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif">{escaped}</text>"#);
    }

    pub fn finish(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// World-frame outline of the padded footprint, `arc` samples per vertex.
pub fn padded_outline(poly: &PaddedPolygon, pose: &Pose2, arc: usize) -> Vec<Vec2> {
    let n = poly.vertices().len();
    let mut out = Vec::with_capacity(n * (arc + 1));
    for i in 0..n {
        let v = poly.vertices()[i];
        let n_in = poly.normals()[(i + n - 1) % n];
        let n_out = poly.normals()[i];
        let a0 = n_in.y.atan2(n_in.x);
        let mut a1 = n_out.y.atan2(n_out.x);
        if a1 < a0 {
            a1 += 2.0 * std::f64::consts::PI;
        }
        for s in 0..=arc {
            let a = a0 + (a1 - a0) * s as f64 / arc.max(1) as f64;
            out.push(pose.to_world(&(v + Vec2::new(a.cos(), a.sin()) * poly.r_shp())));
        }
    }
    out
}

/// Obstacles, reference path and footprint sweep along a state sequence.
pub fn map_overlay(points: &[Vec2], poly: &PaddedPolygon, states: &[Pose2], reference: &[Vec2]) -> String {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in points.iter().chain(reference).copied().chain(states.iter().map(|s| s.translation())) {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    if !lo.x.is_finite() {
        lo = Vec2::zeros();
        hi = Vec2::repeat(1.0);
    }
    let mut svg = Svg::fit(800.0, lo, hi, 0.08);
    for p in points {
        svg.circle(*p, 1.2, "#333333");
    }
    if reference.len() > 1 {
        svg.polyline(reference, "#888888", 1.0);
    }
    for s in states {
        let body: Vec<Vec2> = poly.vertices().iter().map(|v| s.to_world(v)).collect();
        svg.polygon(&padded_outline(poly, s, 6), "#1f77b4", "#1f77b4", 0.05);
        svg.polygon(&body, "#d62728", "none", 0.0);
    }
    let path: Vec<Vec2> = states.iter().map(|s| s.translation()).collect();
    if path.len() > 1 {
        svg.polyline(&path, "#d62728", 1.5);
    }
    svg.finish()
}

fn chart_frame(title: &str, lo: Vec2, hi: Vec2) -> Svg {
    let mut svg = Svg::new(640.0, 400.0, lo, hi);
    let span = hi - lo;
    svg.polyline(&[Vec2::new(lo.x, lo.y), Vec2::new(hi.x, lo.y)], "black", 1.0);
    svg.polyline(&[Vec2::new(lo.x, lo.y), Vec2::new(lo.x, hi.y)], "black", 1.0);
    svg.text(Vec2::new(lo.x + 0.02 * span.x, hi.y - 0.06 * span.y), 14.0, title);
    svg.text(Vec2::new(lo.x + 0.02 * span.x, lo.y + 0.02 * span.y), 10.0, &format!("y: [{:.3}, {:.3}]", lo.y, hi.y));
    svg.text(Vec2::new(hi.x - 0.3 * span.x, lo.y + 0.02 * span.y), 10.0, &format!("x: [{:.3}, {:.3}]", lo.x, hi.x));
    svg
}

/// Bar chart of `values` at x = 1, 2, ….
pub fn bar_chart(title: &str, values: &[f64]) -> String {
    let top = values.iter().copied().fold(0.0, f64::max).max(1e-12) * 1.15;
    let mut svg = chart_frame(title, Vec2::new(0.0, 0.0), Vec2::new(values.len() as f64 + 1.0, top));
    for (i, v) in values.iter().enumerate() {
        let x = i as f64 + 1.0;
        svg.rect(Vec2::new(x - 0.4, 0.0), Vec2::new(x + 0.4, *v), "#1f77b4");
    }
    svg.finish()
}

/// Line chart of named series over x = 1, 2, ….
pub fn line_chart(title: &str, series: &[(&str, &[f64])]) -> String {
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in series.iter().flat_map(|s| s.1.iter()).filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(1e-9);
    let mut svg = chart_frame(title, Vec2::new(0.0, lo - pad), Vec2::new(len as f64 + 1.0, hi + pad));
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];
    for (k, (name, ys)) in series.iter().enumerate() {
        let pts: Vec<Vec2> = ys.iter().enumerate().map(|(i, y)| Vec2::new(i as f64 + 1.0, *y)).collect();
        let color = colors[k % colors.len()];
        svg.polyline(&pts, color, 1.5);
        svg.text(Vec2::new(len as f64 * 0.7, hi - pad * (k as f64 + 1.0)), 11.0, name);
        svg.circle(Vec2::new(len as f64 * 0.68, hi - pad * (k as f64 + 1.0)), 3.0, color);
    }
    svg.finish()
}
