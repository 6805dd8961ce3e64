//! Minimal SVG plots: trajectory with burns, keep-out circle and dispersion
//! ellipses, and ΔV histograms.

use std::fmt::Write;

use nalgebra::{Matrix2, Vector2};

use crate::uq::Histogram;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 64.0;

/// Linear map from data to pixels.
struct Axes {
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
}

impl Axes {
    /// Fit `[xmin, xmax] × [ymin, ymax]` into the plot area, optionally with
    /// equal scales.
    fn fit(mut xr: (f64, f64), mut yr: (f64, f64), equal: bool) -> Self {
        for r in [&mut xr, &mut yr] {
            if !(r.1 > r.0) {
                *r = (r.0 - 1.0, r.0 + 1.0);
            }
            let pad = 0.05 * (r.1 - r.0);
            *r = (r.0 - pad, r.1 + pad);
        }
        let (w, h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
        let (mut sx, mut sy) = (w / (xr.1 - xr.0), h / (yr.1 - yr.0));
        if equal {
            let s = sx.min(sy);
            let cx = 0.5 * (xr.0 + xr.1);
            let cy = 0.5 * (yr.0 + yr.1);
            xr.0 = cx - 0.5 * w / s;
            yr.0 = cy - 0.5 * h / s;
            sx = s;
            sy = s;
        }
        Self { x0: xr.0, y0: yr.0, sx, sy }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) * self.sx
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) * self.sy
    }

    fn x_at(&self, px: f64) -> f64 {
        self.x0 + (px - MARGIN) / self.sx
    }

    fn y_at(&self, py: f64) -> f64 {
        self.y0 + (HEIGHT - MARGIN - py) / self.sy
    }
}

/// 1, 2 or 5 times a power of ten, giving about `target` intervals.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn frame(svg: &mut String, ax: &Axes, title: &str, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    let (xa, xb) = (ax.x_at(l), ax.x_at(r));
    let step = nice_step(xb - xa, 8.0);
    let mut v = (xa / step).ceil() * step;
    while v <= xb {
        let p = ax.px(v);
        let _ = writeln!(svg, r#"<line x1="{p:.1}" y1="{b}" x2="{p:.1}" y2="{}" stroke="black"/>"#, b + 5.0);
        let _ =
            writeln!(svg, r#"<text x="{p:.1}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, b + 18.0, tick(v, step));
        v += step;
    }
    let (ya, yb) = (ax.y_at(b), ax.y_at(t));
    let step = nice_step(yb - ya, 6.0);
    let mut v = (ya / step).ceil() * step;
    while v <= yb {
        let p = ax.py(v);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{p:.1}" x2="{l}" y2="{p:.1}" stroke="black"/>"#, l - 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-size="12" text-anchor="end">{}</text>"#,
            l - 8.0,
            p + 4.0,
            tick(v, step)
        );
        v += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        t - 20.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    format!("{:.*}", digits, if v.abs() < 1e-9 * step { 0.0 } else { v })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n\
         <defs><marker id=\"head\" markerWidth=\"8\" markerHeight=\"8\" refX=\"7\" refY=\"4\" orient=\"auto\"><path d=\"M0,0 L8,4 L0,8 z\" fill=\"crimson\"/></marker></defs>\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// In-plane trajectory picture; positions are `(x radial, y along-track)`
/// and the plot shows along-track to the right, radial up.
pub struct TrajectoryPlot<'a> {
    pub title: &'a str,
    pub path: &'a [Vector2<f64>],
    /// Burn position and in-plane Δv.
    pub burns: &'a [(Vector2<f64>, Vector2<f64>)],
    pub r_kos: f64,
    /// Ellipse centers and in-plane position covariances.
    pub tube: &'a [(Vector2<f64>, Matrix2<f64>)],
    pub confidence: f64,
    /// Sampled trial paths drawn underneath.
    pub trials: &'a [Vec<Vector2<f64>>],
}

impl TrajectoryPlot<'_> {
    pub fn render(&self) -> String {
        let mut xs = vec![-self.r_kos, self.r_kos];
        let mut ys = vec![-self.r_kos, self.r_kos];
        for p in self.path.iter().chain(self.burns.iter().map(|b| &b.0)) {
            xs.push(p[0]);
            ys.push(p[1]);
        }
        let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        let ax = Axes::fit(range(&ys), range(&xs), true);
        let mut svg = open();
        frame(&mut svg, &ax, self.title, "along-track y (m)", "radial x (m)");

        for trial in self.trials {
            polyline(&mut svg, &ax, trial, "#bbbbbb", 0.5);
        }
        for (c, p) in self.tube {
            let eig = p.symmetric_eigen();
            let i = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
            let major = self.confidence * eig.eigenvalues[i].max(0.0).sqrt();
            let minor = self.confidence * eig.eigenvalues[1 - i].max(0.0).sqrt();
            let dir = eig.eigenvectors.column(i);
            // picture angle of the major axis: along-track right, radial up
            let angle = -dir[0].atan2(dir[1]).to_degrees();
            let _ = writeln!(
                svg,
                r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" transform="rotate({angle:.2} {:.2} {:.2})" fill="none" stroke="steelblue" stroke-width="0.6"/>"#,
                ax.px(c[1]),
                ax.py(c[0]),
                major * ax.sx,
                minor * ax.sy,
                ax.px(c[1]),
                ax.py(c[0]),
            );
        }
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="darkorange" stroke-width="1.5"/>"#,
            ax.px(0.0),
            ax.py(0.0),
            self.r_kos * ax.sx
        );
        polyline(&mut svg, &ax, self.path, "black", 1.5);
        let longest = self.burns.iter().map(|b| b.1.norm()).fold(0.0, f64::max);
        for (p, dv) in self.burns {
            let (x1, y1) = (ax.px(p[1]), ax.py(p[0]));
            let len = if longest > 0.0 { 60.0 * dv.norm() / longest } else { 0.0 };
            let n = dv.norm().max(f64::MIN_POSITIVE);
            let (x2, y2) = (x1 + len * dv[1] / n, y1 - len * dv[0] / n);
            let _ = writeln!(svg, r#"<circle cx="{x1:.2}" cy="{y1:.2}" r="3" fill="crimson"/>"#);
            if len > 0.0 {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="crimson" stroke-width="1.5" marker-end="url(#head)"/>"#
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn polyline(svg: &mut String, ax: &Axes, path: &[Vector2<f64>], color: &str, width: f64) {
    if path.is_empty() {
        return;
    }
    let mut pts = String::new();
    for p in path {
        let _ = write!(pts, "{:.2},{:.2} ", ax.px(p[1]), ax.py(p[0]));
    }
    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#, pts.trim_end());
}

/// Bar chart of a ΔV histogram.
pub fn histogram(title: &str, xlabel: &str, h: &Histogram) -> String {
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (lo, hi) = (h.edges.first().copied().unwrap_or(0.0), h.edges.last().copied().unwrap_or(1.0));
    let ax = Axes::fit((lo, hi), (0.0, top), false);
    let mut svg = open();
    frame(&mut svg, &ax, title, xlabel, "trials");
    for (i, &c) in h.counts.iter().enumerate() {
        let (x0, x1) = (ax.px(h.edges[i]), ax.px(h.edges[i + 1]));
        let (y0, y1) = (ax.py(0.0), ax.py(c as f64));
        let _ = writeln!(
            svg,
            r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white" stroke-width="0.5"/>"#,
            (x1 - x0).max(0.0),
            (y0 - y1).max(0.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
