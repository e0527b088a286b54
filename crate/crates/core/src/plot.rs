//! Hand-written SVG for trajectories and density heat maps.
//!
//! Output depends only on the inputs: coordinates are printed with a fixed
//! number of decimals and nothing time- or locale-dependent is embedded.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::GridSpec;
use crate::integrator::Trajectory;

const SIZE: f64 = 560.0;
const MARGIN: f64 = 40.0;
const LINE_HEIGHT: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    /// Plot window is [−half_width, half_width]².
    pub half_width: f64,
    pub stroke_width: f64,
    /// Plot every `stride`-th sample; the final sample is always drawn.
    pub stride: usize,
    /// Text lines printed under the plot.
    pub annotation: Vec<String>,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec { half_width: 4.0, stroke_width: 0.6, stride: 3, annotation: vec![] }
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

struct Frame {
    half_width: f64,
}

impl Frame {
    fn x(&self, q1: f64) -> f64 {
        MARGIN + (q1 + self.half_width) / (2.0 * self.half_width) * SIZE
    }

    fn y(&self, q2: f64) -> f64 {
        MARGIN + (self.half_width - q2) / (2.0 * self.half_width) * SIZE
    }
}

fn open(out: &mut String, annotation_lines: usize) {
    let width = SIZE + 2.0 * MARGIN;
    let height = width + annotation_lines as f64 * LINE_HEIGHT;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn axes(out: &mut String, frame: &Frame) {
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let l = frame.half_width;
    let mut tick = -l.floor();
    while tick <= l {
        let (x, y) = (frame.x(tick), frame.y(tick));
        let bottom = MARGIN + SIZE;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{tick}</text>"#,
            bottom + 5.0,
            bottom + 18.0
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{tick}</text>"#,
            MARGIN - 5.0,
            MARGIN - 8.0,
            y + 4.0
        );
        tick += 1.0;
    }
}

fn annotate(out: &mut String, lines: &[String]) {
    for (i, line) in lines.iter().enumerate() {
        let y = 2.0 * MARGIN + SIZE + (i as f64 + 0.5) * LINE_HEIGHT;
        let _ = writeln!(
            out,
            r#"<text x="{MARGIN}" y="{y:.2}" font-size="12" font-family="monospace">{}</text>"#,
            escape(line)
        );
    }
}

pub fn trajectory_svg(traj: &Trajectory, plot: &PlotSpec) -> String {
    let frame = Frame { half_width: plot.half_width };
    let stride = plot.stride.max(1);
    let n = traj.samples.len();
    let mut out = String::with_capacity(16 * n / stride + 4096);
    open(&mut out, plot.annotation.len());
    axes(&mut out, &frame);
    let _ = write!(
        out,
        r#"<polyline fill="none" stroke="navy" stroke-width="{}" stroke-linejoin="round" points=""#,
        plot.stroke_width
    );
    let last = n.saturating_sub(1);
    for (i, s) in traj.samples.iter().enumerate() {
        if i % stride == 0 || i == last {
            let _ = write!(out, "{:.2},{:.2} ", frame.x(s.q1), frame.y(s.q2));
        }
    }
    out.push_str("\"/>\n");
    let start = traj.start;
    let _ = writeln!(
        out,
        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="crimson"/>"#,
        frame.x(start[0]),
        frame.y(start[1])
    );
    annotate(&mut out, &plot.annotation);
    out.push_str("</svg>\n");
    out
}

/// Heat map of per-cell `values` (in [`GridSpec`] cell order), white at zero and black at the maximum.
pub fn density_svg(values: &[f64], grid: GridSpec, annotation: &[String]) -> String {
    let frame = Frame { half_width: grid.half_width };
    let peak = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let cell = SIZE / grid.resolution as f64;
    let mut out = String::with_capacity(64 * values.len() + 4096);
    open(&mut out, annotation.len());
    for (i, &v) in values.iter().enumerate() {
        if !(v > 0.0) || peak == 0.0 {
            continue;
        }
        let shade = (255.0 * (1.0 - (v / peak).min(1.0))).round() as u8;
        let c = grid.center(i);
        let x = frame.x(c[0]) - cell / 2.0;
        let y = frame.y(c[1]) - cell / 2.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.3}" height="{cell:.3}" fill="rgb({shade},{shade},{shade})"/>"#
        );
    }
    axes(&mut out, &frame);
    annotate(&mut out, annotation);
    out.push_str("</svg>\n");
    out
}
