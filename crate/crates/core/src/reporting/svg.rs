//! Static SVG renderings. Output depends only on the report, so repeated
//! renderings are byte-identical.

use std::fmt::Write as _;

use super::{scale_value, ConvergenceReport, PointClass, SolverReport};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: &[&str] = &["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Axis {
    Evaluations,
    Time,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = WIDTH - LEFT - RIGHT;
        if self.x1 > self.x0 {
            LEFT + (x - self.x0) / (self.x1 - self.x0) * w
        } else {
            LEFT + 0.5 * w
        }
    }

    fn py(&self, y: f64) -> f64 {
        TOP + (1.0 - y.clamp(0.0, 1.0)) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        esc(title)
    );
}

fn polyline(points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

pub(crate) fn convergence_svg(report: &ConvergenceReport, axis: Axis) -> String {
    let curves: Vec<(&SolverReport, Vec<f64>, &[f64], Option<&[f64]>)> = report
        .solvers
        .iter()
        .map(|s| match axis {
            Axis::Evaluations => (
                s,
                (1..=s.mean.len()).map(|k| k as f64).collect(),
                s.mean.as_slice(),
                s.std.as_deref(),
            ),
            Axis::Time => (s, s.time.grid.clone(), s.time.mean.as_slice(), s.time.std.as_deref()),
        })
        .collect();
    let mut x0 = if axis == Axis::Time { 0.0 } else { 1.0 };
    let mut x1 = curves
        .iter()
        .flat_map(|c| c.1.last().copied())
        .fold(x0, f64::max);
    if axis == Axis::Time {
        if let Some(b) = report.budget_time_s {
            x1 = x1.max(b);
        }
    } else if x1 <= x0 {
        x0 = 0.0;
    }
    let frame = Frame { x0, x1 };

    let mut out = String::new();
    let label = match axis {
        Axis::Evaluations => "number of evaluations",
        Axis::Time => "cumulative time (s)",
    };
    header(&mut out, &format!("{} ({})", report.experiment, report.problem));
    // axes and ticks
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/><line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}"/></g>"#,
        l = LEFT,
        r = WIDTH - RIGHT,
        t = TOP,
        b = HEIGHT - BOTTOM
    );
    for k in 0..=5 {
        let y = k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#,
            LEFT - 6.0,
            frame.py(y) + 4.0
        );
        let xv = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            frame.px(xv),
            HEIGHT - BOTTOM + 18.0,
            if axis == Axis::Evaluations { format!("{xv:.0}") } else { format!("{xv:.3}") }
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">scaled best valid value</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (i, (s, xs, mean, std)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(sd) = std {
            let upper: Vec<(f64, f64)> = xs
                .iter()
                .zip(mean.iter().zip(sd.iter()))
                .map(|(x, (m, d))| (frame.px(*x), frame.py(scale_value(*m + *d, report.scale))))
                .collect();
            let lower: Vec<(f64, f64)> = xs
                .iter()
                .zip(mean.iter().zip(sd.iter()))
                .rev()
                .map(|(x, (m, d))| (frame.px(*x), frame.py(scale_value(*m - *d, report.scale))))
                .collect();
            let band: Vec<(f64, f64)> = upper.into_iter().chain(lower).collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                polyline(&band)
            );
        }
        let line: Vec<(f64, f64)> = xs
            .iter()
            .zip(mean.iter())
            .map(|(x, m)| (frame.px(*x), frame.py(scale_value(*m, report.scale))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            polyline(&line)
        );
        let ly = TOP + 18.0 * i as f64 + 10.0;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&s.solver)
        );
    }
    if let Some(w) = report.warm_start_value {
        let y = frame.py(scale_value(w, report.scale));
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="red" stroke-dasharray="6,4"/>"#,
            LEFT,
            WIDTH - RIGHT
        );
    }
    if axis == Axis::Time {
        if let Some(b) = report.budget_time_s {
            let x = frame.px(b);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="red" stroke-dasharray="6,4"/>"#,
                TOP,
                HEIGHT - BOTTOM
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub(crate) fn parallel_svg(report: &ConvergenceReport, solver: &SolverReport) -> String {
    let d = solver.parallel.first().map(|r| r.x.len()).unwrap_or(0);
    let n_axes = d + 2;
    let max_violation = solver.parallel.iter().map(|r| r.violation).fold(0.0, f64::max);
    let frame = Frame {
        x0: 0.0,
        x1: (n_axes.max(2) - 1) as f64,
    };
    let mut out = String::new();
    header(
        &mut out,
        &format!("{}: {} median run (seed {})", report.experiment, solver.solver, solver.median_seed),
    );
    for a in 0..n_axes {
        let x = frame.px(a as f64);
        let name = if a < d {
            format!("DV_{a}")
        } else if a == d {
            "objective".into()
        } else {
            "violation".into()
        };
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{name}</text>"##,
            frame.py(1.0),
            frame.py(0.0),
            HEIGHT - BOTTOM + 16.0
        );
    }
    let style = |c: PointClass| match c {
        PointClass::Infeasible => ("blue", 0.6, 0.35),
        PointClass::Feasible => ("green", 0.8, 0.5),
        PointClass::Optimum => ("black", 2.5, 1.0),
        PointClass::Reference => ("red", 2.5, 1.0),
    };
    for class in [PointClass::Infeasible, PointClass::Feasible, PointClass::Optimum, PointClass::Reference] {
        for r in solver.parallel.iter().filter(|r| r.class == class) {
            let mut values = r.x.clone();
            values.push(scale_value(r.f, report.parallel_scale));
            values.push(if max_violation > 0.0 { r.violation / max_violation } else { 0.0 });
            let pts: Vec<(f64, f64)> = values
                .iter()
                .enumerate()
                .map(|(a, v)| (frame.px(a as f64), frame.py(*v)))
                .collect();
            let (color, width, opacity) = style(class);
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
                polyline(&pts)
            );
        }
    }
    for (i, class) in [PointClass::Infeasible, PointClass::Feasible, PointClass::Optimum, PointClass::Reference]
        .into_iter()
        .enumerate()
    {
        let (color, _, _) = style(class);
        let ly = TOP + 18.0 * i as f64 + 10.0;
        let lx = WIDTH - RIGHT + 25.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            class.name()
        );
    }
    out.push_str("</svg>\n");
    out
}
