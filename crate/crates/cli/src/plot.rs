//! Deterministic SVG line and scatter plots.

use std::fmt::Write as _;

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 140.0;
const MARGIN: f64 = 40.0;
const GAP: f64 = 16.0;
/// Series longer than this are thinned to keep files small.
const MAX_POINTS: usize = 4000;
const STROKES: [&str; 4] = ["#1f4e79", "#b03a2e", "#1e8449", "#7d3c98"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Series sharing one y-axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn single(title: impl Into<String>, values: Vec<f64>) -> Self {
        let title = title.into();
        Panel { series: vec![Series { name: title.clone(), values }], title }
    }
}

#[derive(Debug, PartialEq)]
pub struct EmptyPlot;

fn header(out: &mut String, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{height}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (-1.0, 1.0)
    } else if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Stacked line panels, one `<polyline>` per series.
pub fn line_svg(panels: &[Panel]) -> Result<String, EmptyPlot> {
    if panels.is_empty() || panels.iter().any(|p| p.series.is_empty() || p.series.iter().any(|s| s.values.is_empty())) {
        return Err(EmptyPlot);
    }
    let height = 2.0 * MARGIN + panels.len() as f64 * (PANEL_HEIGHT + GAP) - GAP;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, height);
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN + i as f64 * (PANEL_HEIGHT + GAP);
        let (lo, hi) = range(panel.series.iter().flat_map(|s| s.values.iter().copied()));
        let _ = writeln!(out, r#"<g class="panel">"#);
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}">{} [{:.4}, {:.4}]</text>"#,
            MARGIN + 4.0,
            top + 12.0,
            escape(&panel.title),
            lo,
            hi
        );
        for (k, s) in panel.series.iter().enumerate() {
            let n = s.values.len();
            let step = n.div_ceil(MAX_POINTS).max(1);
            let mut pts = String::new();
            for (j, v) in s.values.iter().enumerate().step_by(step) {
                let x = MARGIN + if n > 1 { plot_w * j as f64 / (n - 1) as f64 } else { plot_w / 2.0 };
                let v = if v.is_finite() { *v } else { lo };
                let y = top + PANEL_HEIGHT * (1.0 - (v - lo) / (hi - lo));
                let _ = write!(pts, "{x:.2},{y:.2} ");
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"><title>{}</title></polyline>"#,
                STROKES[k % STROKES.len()],
                pts.trim_end(),
                escape(&s.name)
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Time-frequency scatter; amplitude is encoded as circle radius.
pub fn scatter_svg(title: &str, points: &[(f64, f64, f64)]) -> Result<String, EmptyPlot> {
    if points.is_empty() {
        return Err(EmptyPlot);
    }
    let height = 2.0 * MARGIN + 3.0 * PANEL_HEIGHT;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = height - 2.0 * MARGIN;
    let (x_lo, x_hi) = range(points.iter().map(|p| p.0));
    let (y_lo, y_hi) = range(points.iter().map(|p| p.1));
    let a_max = points.iter().map(|p| p.2.abs()).filter(|a| a.is_finite()).fold(0.0, f64::max);
    let mut out = String::new();
    header(&mut out, height);
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}">{} [frequency {:.4}, {:.4}]</text>"#,
        MARGIN + 4.0,
        MARGIN - 6.0,
        escape(title),
        y_lo,
        y_hi
    );
    let step = points.len().div_ceil(4 * MAX_POINTS).max(1);
    for &(x, y, a) in points.iter().step_by(step) {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let cx = MARGIN + plot_w * (x - x_lo) / (x_hi - x_lo);
        let cy = MARGIN + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo));
        let r = if a_max > 0.0 { 0.5 + 3.5 * (a.abs() / a_max).sqrt() } else { 0.5 };
        let _ = writeln!(out, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="#1f4e79" fill-opacity="0.5"/>"##);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_one_polyline() {
        let svg = line_svg(&[Panel::single("flat", vec![3.0; 50])]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let p = vec![Panel::single("a", (0..100).map(|i| (i as f64).sin()).collect())];
        assert_eq!(line_svg(&p).unwrap(), line_svg(&p).unwrap());
        let pts: Vec<_> = (0..50).map(|i| (i as f64, 0.1 * i as f64, 1.0)).collect();
        assert_eq!(scatter_svg("h", &pts).unwrap(), scatter_svg("h", &pts).unwrap());
    }

    #[test]
    fn one_panel_per_row() {
        let panels: Vec<Panel> = (0..5).map(|i| Panel::single(format!("c{i}"), vec![i as f64, 1.0])).collect();
        assert_eq!(line_svg(&panels).unwrap().matches(r#"<g class="panel">"#).count(), 5);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(line_svg(&[]), Err(EmptyPlot));
        assert_eq!(line_svg(&[Panel::single("x", vec![])]), Err(EmptyPlot));
        assert_eq!(scatter_svg("x", &[]), Err(EmptyPlot));
    }
}
