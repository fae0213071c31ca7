//! Minimal SVG plots: s-t and d-t corridor diagrams and motion profiles.

use std::fmt::Write;

use crate::bezier::{PiecewiseBezier, TrajectorySample};
use crate::harness::metrics::Trace;
use crate::voxelizer::Voxel;

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Axis-aligned box in data coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub boxes: Vec<DataBox>,
    /// Dashed horizontal reference lines.
    pub limits: Vec<f64>,
}

impl Panel {
    fn extent(&self) -> Option<(f64, f64, f64, f64)> {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.boxes.iter().flat_map(|b| [b.x0, b.x1]));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.boxes.iter().flat_map(|b| [b.y0, b.y1]))
            .chain(self.limits.iter().copied());
        let (x0, x1) = min_max(xs)?;
        let (y0, y1) = min_max(ys)?;
        Some((x0, x1, y0, y1))
    }

    fn render(&self, out: &mut String, top: f64) {
        let _ = writeln!(out, r#"<g transform="translate(0,{top:.1})">"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="18" font-size="14" text-anchor="middle">{}</text>"#,
            PANEL_W / 2.0,
            escape(&self.title)
        );
        let (px0, px1) = (MARGIN_L, PANEL_W - MARGIN_R);
        let (py0, py1) = (PANEL_H - MARGIN_B, MARGIN_T);
        let _ = writeln!(
            out,
            r##"<rect x="{px0:.1}" y="{py1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            px1 - px0,
            py0 - py1
        );
        let Some((x0, x1, y0, y1)) = self.extent() else {
            let _ = writeln!(out, "</g>");
            return;
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        let fx = |x: f64| px0 + (x - x0) / (x1 - x0) * (px1 - px0);
        let fy = |y: f64| py0 - (y - y0) / (y1 - y0) * (py0 - py1);

        for b in &self.boxes {
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" fill-opacity="0.35" stroke="#3182bd" stroke-width="0.8"/>"##,
                fx(b.x0),
                fy(b.y1),
                fx(b.x1) - fx(b.x0),
                fy(b.y0) - fy(b.y1)
            );
        }
        for &l in &self.limits {
            let _ = writeln!(
                out,
                r##"<line x1="{px0:.1}" x2="{px1:.1}" y1="{y:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                y = fy(l)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", fx(x), fy(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
                px1 - 90.0,
                py1 + 14.0 + 13.0 * i as f64,
                escape(&s.label)
            );
        }
        for (v, x) in [(x0, px0), (x1, px1)] {
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{v:.2}</text>"#,
                py0 + 14.0
            );
        }
        for (v, y) in [(y0, py0), (y1, py1)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#,
                px0 - 4.0,
                y + 3.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            (px0 + px1) / 2.0,
            PANEL_H - 8.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            (py0 + py1) / 2.0,
            (py0 + py1) / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(out, "</g>");
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    it.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((a, b)) => Some((a.min(v), b.max(v))),
    })
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 1.0, hi + 1.0)
    } else {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacks panels vertically into one document.
pub fn render(panels: &[Panel]) -> String {
    let h = PANEL_H * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W:.0}" height="{h:.0}" viewBox="0 0 {PANEL_W:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, i as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    out
}

const PLOT_STEP: f64 = 0.02;

/// s-t diagram: corridor voxels as boxes with the planned trajectory on top.
pub fn st_panel(traj: Option<&PiecewiseBezier>, corridor: &[Voxel]) -> Panel {
    Panel {
        title: "s-t".into(),
        x_label: "t [s]".into(),
        y_label: "s [m]".into(),
        boxes: corridor.iter().map(|v| DataBox { x0: v.lt, x1: v.ut, y0: v.ls, y1: v.us }).collect(),
        series: traj
            .map(|tr| Series { label: "s(t)".into(), points: tr.sample(PLOT_STEP).iter().map(|p| (p.t, p.s)).collect() })
            .into_iter()
            .collect(),
        limits: Vec::new(),
    }
}

pub fn dt_panel(traj: Option<&PiecewiseBezier>, corridor: &[Voxel]) -> Panel {
    Panel {
        title: "d-t".into(),
        x_label: "t [s]".into(),
        y_label: "d [m]".into(),
        boxes: corridor.iter().map(|v| DataBox { x0: v.lt, x1: v.ut, y0: v.ld, y1: v.ud }).collect(),
        series: traj
            .map(|tr| Series { label: "d(t)".into(), points: tr.sample(PLOT_STEP).iter().map(|p| (p.t, p.d)).collect() })
            .into_iter()
            .collect(),
        limits: Vec::new(),
    }
}

/// Both corridor diagrams in one document.
pub fn corridor_svg(traj: Option<&PiecewiseBezier>, corridor: &[Voxel]) -> String {
    render(&[st_panel(traj, corridor), dt_panel(traj, corridor)])
}

/// Velocity, acceleration and jerk panels, both axes each; `limit` draws
/// the symmetric bound on acceleration and jerk.
pub fn profiles_svg(samples: &[TrajectorySample], limit: Option<f64>) -> String {
    let series = |label: &str, f: &dyn Fn(&TrajectorySample) -> f64| Series {
        label: label.into(),
        points: samples.iter().map(|p| (p.t, f(p))).collect(),
    };
    let bounds = limit.map(|l| vec![-l, l]).unwrap_or_default();
    let panel = |title: &str, unit: &str, s: Series, d: Series, limits: Vec<f64>| Panel {
        title: title.into(),
        x_label: "t [s]".into(),
        y_label: unit.into(),
        series: vec![s, d],
        boxes: Vec::new(),
        limits,
    };
    render(&[
        panel("velocity", "m/s", series("v_s", &|p| p.v_s), series("v_d", &|p| p.v_d), Vec::new()),
        panel("acceleration", "m/s^2", series("a_s", &|p| p.a_s), series("a_d", &|p| p.a_d), bounds.clone()),
        panel("jerk", "m/s^3", series("jerk_s", &|p| p.jerk_s), series("jerk_d", &|p| p.jerk_d), bounds),
    ])
}

/// Ego motion recorded in a run trace, as trajectory samples.
pub fn trace_samples(trace: &Trace) -> Vec<TrajectorySample> {
    trace
        .frames
        .iter()
        .map(|f| TrajectorySample {
            t: f.t,
            s: f.ego.s,
            d: f.ego.d,
            v_s: f.ego.v_s,
            v_d: f.ego.v_d,
            a_s: f.ego.a_s,
            a_d: f.ego.a_d,
            jerk_s: f.jerk_s,
            jerk_d: f.jerk_d,
            kappa: f64::NAN,
        })
        .collect()
}
