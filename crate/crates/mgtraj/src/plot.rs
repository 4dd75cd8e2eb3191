//! Static SVG trajectory plots: every mode on the left, the mode closest to
//! the ground truth on the right.

use std::fmt::Write;

use mgtraj_core::data::TrajectoryWindow;
use mgtraj_core::metrics::{ade, Forecast};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotStyle {
    pub panel_width: f64,
    pub panel_height: f64,
    pub margin: f64,
    pub legend_height: f64,
    pub history: &'static str,
    pub ground_truth: &'static str,
    pub proposal: &'static str,
    pub prediction: &'static str,
    pub goal: &'static str,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            panel_width: 420.0,
            panel_height: 420.0,
            margin: 24.0,
            legend_height: 56.0,
            history: "#222222",
            ground_truth: "#2ca02c",
            proposal: "#9a9a9a",
            prediction: "#1f77b4",
            goal: "#ff7f0e",
        }
    }
}

/// Maps scene coordinates into a panel with equal axis scaling; y points up.
struct Frame {
    min: [f64; 2],
    scale: f64,
    origin: [f64; 2],
    height: f64,
}

impl Frame {
    fn fit(points: &[[f64; 2]], origin: [f64; 2], width: f64, height: f64) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]).max(1e-6);
        let scale = (width.min(height)) / span;
        let pad = [(width - (max[0] - min[0]) * scale) / 2.0, (height - (max[1] - min[1]) * scale) / 2.0];
        Self {
            min,
            scale,
            origin: [origin[0] + pad[0], origin[1] - pad[1]],
            height,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.origin[0] + (p[0] - self.min[0]) * self.scale,
            self.origin[1] + self.height - (p[1] - self.min[1]) * self.scale,
        )
    }
}

fn polyline(out: &mut String, frame: &Frame, points: &[[f64; 2]], color: &str, width: f64, dash: Option<&str>) {
    let coords: Vec<String> = points
        .iter()
        .map(|p| {
            let (x, y) = frame.map(*p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"{dash}/>",
        coords.join(" ")
    );
}

fn star_points(cx: f64, cy: f64, r: f64) -> String {
    (0..10)
        .map(|i| {
            let radius = if i % 2 == 0 { r } else { r * 0.45 };
            let angle = std::f64::consts::PI * (i as f64) / 5.0 - std::f64::consts::FRAC_PI_2;
            format!("{:.2},{:.2}", cx + radius * angle.cos(), cy + radius * angle.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn star(out: &mut String, frame: &Frame, p: [f64; 2], color: &str) {
    let (x, y) = frame.map(p);
    let _ = writeln!(out, "<polygon points=\"{}\" fill=\"{color}\"/>", star_points(x, y, 6.0));
}

/// Future with the last observation prepended so the curves connect.
fn joined(anchor: [f64; 2], future: &[[f64; 2]]) -> Vec<[f64; 2]> {
    std::iter::once(anchor).chain(future.iter().copied()).collect()
}

/// Index of the final-stage mode with the smallest ADE.
pub fn closest_mode(window: &TrajectoryWindow, forecast: &Forecast) -> usize {
    let finals = forecast.final_modes();
    (0..finals.len())
        .min_by(|&a, &b| ade(&finals[a], &window.future).total_cmp(&ade(&finals[b], &window.future)))
        .expect("forecast without modes")
}

struct Panel<'a> {
    title: &'a str,
    modes: Vec<usize>,
    x0: f64,
}

pub fn render_svg(window: &TrajectoryWindow, forecast: &Forecast, style: &PlotStyle) -> String {
    let proposals = &forecast.stages[0];
    let finals = forecast.final_modes();
    let anchor = window.last_observed();
    let mut all: Vec<[f64; 2]> = window.positions().collect();
    all.extend(forecast.goals.iter().copied());
    for m in proposals.iter().chain(finals) {
        all.extend(m.iter().copied());
    }
    let best = closest_mode(window, forecast);
    let width = 2.0 * style.panel_width + 3.0 * style.margin;
    let height = style.panel_height + 2.0 * style.margin + style.legend_height;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let panels = [
        Panel {
            title: "all modes",
            modes: (0..finals.len()).collect(),
            x0: style.margin,
        },
        Panel {
            title: "closest to ground truth",
            modes: vec![best],
            x0: 2.0 * style.margin + style.panel_width,
        },
    ];
    for panel in &panels {
        let inner = style.margin;
        let frame = Frame::fit(
            &all,
            [panel.x0 + inner, style.margin + inner],
            style.panel_width - 2.0 * inner,
            style.panel_height - 2.0 * inner,
        );
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#cccccc\"/>",
            panel.x0, style.margin, style.panel_width, style.panel_height
        );
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", panel.x0 + 6.0, style.margin + 16.0, panel.title);
        for &m in &panel.modes {
            polyline(&mut out, &frame, &joined(anchor, &proposals[m]), style.proposal, 1.0, Some("4 3"));
        }
        for &m in &panel.modes {
            polyline(&mut out, &frame, &joined(anchor, &finals[m]), style.prediction, 1.5, None);
        }
        polyline(&mut out, &frame, &window.history, style.history, 2.0, None);
        polyline(&mut out, &frame, &joined(anchor, &window.future), style.ground_truth, 2.0, Some("1 2"));
        for &m in &panel.modes {
            star(&mut out, &frame, forecast.goals[m], style.goal);
        }
    }
    legend(&mut out, style, style.margin, style.margin * 2.0 + style.panel_height + 8.0);
    out.push_str("</svg>\n");
    out
}

fn legend(out: &mut String, style: &PlotStyle, x: f64, y: f64) {
    let entries: [(&str, &str, Option<&str>); 4] = [
        ("history", style.history, None),
        ("ground truth", style.ground_truth, Some("1 2")),
        ("initial proposal", style.proposal, Some("4 3")),
        ("final prediction", style.prediction, None),
    ];
    let _ = writeln!(out, "<g id=\"legend\">");
    let mut cx = x;
    for (label, color, dash) in entries {
        let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            cx + 28.0
        );
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{label}</text>", cx + 34.0, y + 4.0);
        cx += 150.0;
    }
    let _ = writeln!(out, "<polygon points=\"{}\" fill=\"{}\"/>", star_points(cx + 10.0, y, 6.0), style.goal);
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">goal</text>", cx + 22.0, y + 4.0);
    let _ = writeln!(out, "</g>");
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgtraj_core::data::{synthesize, SyntheticKind};

    fn sample() -> (TrajectoryWindow, Forecast) {
        let w = synthesize(SyntheticKind::Arc, 1, 3).unwrap().remove(0);
        let shifted: Vec<[f64; 2]> = w.future.iter().map(|p| [p[0] + 0.5, p[1]]).collect();
        let f = Forecast {
            goals: vec![*shifted.last().unwrap(), *w.future.last().unwrap()],
            stages: vec![vec![shifted.clone(), shifted.clone()], vec![shifted, w.future.clone()]],
        };
        (w, f)
    }

    #[test]
    fn closest_mode_is_exact_match() {
        let (w, f) = sample();
        assert_eq!(closest_mode(&w, &f), 1);
    }

    #[test]
    fn legend_styles_are_distinct() {
        let s = PlotStyle::default();
        let roles = [(s.ground_truth, "1 2"), (s.proposal, "4 3"), (s.prediction, "")];
        for i in 0..roles.len() {
            for j in i + 1..roles.len() {
                assert_ne!(roles[i].0, roles[j].0);
                assert_ne!(roles[i].1, roles[j].1);
            }
        }
        let (w, f) = sample();
        let svg = render_svg(&w, &f, &s);
        for label in ["ground truth", "initial proposal", "final prediction", "goal", "history"] {
            assert!(svg.contains(&format!(">{label}</text>")), "{label}");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let (w, f) = sample();
        let s = PlotStyle::default();
        assert_eq!(render_svg(&w, &f, &s), render_svg(&w, &f, &s));
        assert!(render_svg(&w, &f, &s).starts_with("<svg"));
    }
}
