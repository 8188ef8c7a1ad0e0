//! Minimal SVG output: line charts with axes, and scene/trajectory overlays.

use std::fmt::Write as _;

use crate::scene::{ObjectKind, Rgb, Scene, BACKGROUND, CUTLERY_ASPECT};
use crate::trajectory::{sample_trajectory, ControlPoint, DEFAULT_SAMPLES};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y extent; derived from the data when `None`.
    pub y_range: Option<(f64, f64)>,
}

fn hex(c: Rgb) -> String {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", q(c[0]), q(c[1]), q(c[2]))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if let Some((a, b)) = self.y_range {
            (y0, y1) = (a, b);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pw = w - left - right;
        let ph = h - top - bottom;
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            left + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<path d="M{left:.1},{top:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
            top + ph,
            left + pw
        );
        for i in 0..=5 {
            let y = y0 + (y1 - y0) * i as f64 / 5.0;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{left:.1}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#,
                left - 4.0,
                sy(y),
                sy(y),
                left - 6.0,
                sy(y) + 4.0
            );
        }
        for i in 0..=5 {
            let x = x0 + (x1 - x0) * i as f64 / 5.0;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.1}</text>"#,
                sx(x),
                top + ph,
                sx(x),
                top + ph + 4.0,
                sx(x),
                top + ph + 18.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            h - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            );
            for &(x, y) in &s.points {
                let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            }
            let ly = top + 14.0 + 18.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                left + pw + 12.0,
                left + pw + 32.0,
                left + pw + 38.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// Scene drawn from its object list, with one curve per control point;
/// curves fade from dark blue (first) to light blue (last).
pub fn trajectory_overlay(scene: &Scene, thetas: &[ControlPoint]) -> String {
    let size = 400.0;
    let px = |v: f64| v * size;
    let py = |v: f64| (1.0 - v) * size;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(out, r#"<rect width="{size}" height="{size}" fill="{}"/>"#, hex(BACKGROUND));
    for o in &scene.objects {
        let fill = hex(o.kind.color(scene.split));
        match o.kind {
            ObjectKind::Cutlery => {
                let (lw, lh) = (2.0 * px(o.radius), 2.0 * px(o.radius) / CUTLERY_ASPECT);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{lw:.2}" height="{lh:.2}" fill="{fill}" transform="rotate({:.2} {:.2} {:.2})"/>"#,
                    px(o.cx) - lw / 2.0,
                    py(o.cy) - lh / 2.0,
                    -o.angle.to_degrees(),
                    px(o.cx),
                    py(o.cy)
                );
            }
            _ => {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill}"/>"#,
                    px(o.cx),
                    py(o.cy),
                    px(o.radius)
                );
            }
        }
    }
    let n = thetas.len();
    for (i, &theta) in thetas.iter().enumerate() {
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
        let color = hex(lerp([0.03, 0.19, 0.42], [0.62, 0.79, 0.88], t));
        let Ok(traj) = sample_trajectory(theta, DEFAULT_SAMPLES) else { continue };
        let path: Vec<String> = traj.points.iter().map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1]))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ObjectCount, Split};

    #[test]
    fn chart_has_one_polyline_per_series() {
        let chart = LineChart {
            title: "accuracy <k>".into(),
            x_label: "k".into(),
            y_label: "acc".into(),
            series: vec![
                Series { name: "a".into(), points: vec![(1.0, 0.5), (2.0, 0.7)] },
                Series { name: "b".into(), points: vec![(1.0, 0.4), (2.0, 0.9)] },
            ],
            y_range: Some((0.0, 1.0)),
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("accuracy &lt;k&gt;"));
        assert_eq!(svg, chart.to_svg());
    }

    #[test]
    fn overlay_draws_objects_and_curves() {
        let s = generate_scene(4, Split::Test, ObjectCount::Exactly(4)).unwrap();
        let svg = trajectory_overlay(&s, &[ControlPoint::new(0.2, 0.8), ControlPoint::new(0.5, 0.5)]);
        let shapes = svg.matches("<circle").count() + svg.matches("<rect").count() - 1;
        assert_eq!(shapes, 4);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
