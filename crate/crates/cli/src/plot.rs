//! Standalone SVG line plots.

use std::fmt::Write as _;

/// One polyline; points with a non-finite `y` are skipped.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    /// `(x, y, error bar half-height)`.
    pub points: Vec<(f64, f64, f64)>,
}

const W: f64 = 560.0;
const H: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Renders the series on shared axes with five ticks per axis.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let finite: Vec<(f64, f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let (x0, x1) = nice_range(
        finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (_, y1) = nice_range(
        0.0,
        finite
            .iter()
            .map(|p| p.1 + p.2.max(0.0))
            .fold(f64::NEG_INFINITY, f64::max),
    );
    let y0 = 0.0f64.min(finite.iter().map(|p| p.1).fold(0.0, f64::min));
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#,
        l = LEFT,
        t = TOP,
        b = H - BOTTOM,
        r = W - RIGHT
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{b}" x2="{x}" y2="{b2}" stroke="black"/><text x="{x}" y="{ty}" text-anchor="middle">{xv:.3}</text>"#,
            x = px(xv),
            b = H - BOTTOM,
            b2 = H - BOTTOM + 5.0,
            ty = H - BOTTOM + 18.0,
            xv = xv
        );
        let _ = writeln!(
            s,
            r#"<line x1="{l}" y1="{y}" x2="{l2}" y2="{y}" stroke="black"/><text x="{tx}" y="{ty}" text-anchor="end">{yv:.3}</text>"#,
            l = LEFT,
            l2 = LEFT - 5.0,
            y = py(yv),
            tx = LEFT - 8.0,
            ty = py(yv) + 4.0,
            yv = yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(y_label),
        y = (TOP + H - BOTTOM) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<&(f64, f64, f64)> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(p.0),
                py(p.1)
            );
            if p.2 > 0.0 && p.2.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{a:.2}" x2="{x:.2}" y2="{b:.2}" stroke="{color}"/>"#,
                    x = px(p.0),
                    a = py(p.1 - p.2),
                    b = py(p.1 + p.2)
                );
            }
        }
        let ly = TOP + 6.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{color}"/><text x="{tx}" y="{ty}">{}</text>"#,
            escape(&ser.name),
            x = W - RIGHT - 150.0,
            y = ly,
            tx = W - RIGHT - 134.0,
            ty = ly + 9.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_points_and_skips_gaps() {
        let svg = line_plot(
            "t <1>",
            "x",
            "y",
            &[Series {
                name: "a".into(),
                points: vec![(0.0, 1.0, 0.1), (1.0, f64::NAN, 0.0), (2.0, 3.0, 0.0)],
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(!svg.contains("NaN"));
    }
}
