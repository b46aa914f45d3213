//! Minimal line plots written as SVG text.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    /// `(x, y, standard error)`
    pub points: Vec<(f64, f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

const W: f64 = 260.0;
const H: f64 = 220.0;
const MARGIN: f64 = 40.0;

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Panels side by side sharing axis labels.
pub fn panel_row(title: &str, x_label: &str, y_label: &str, panels: &[Panel]) -> String {
    let width = MARGIN + panels.len() as f64 * (W + MARGIN);
    let height = H + 2.5 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="16" text-anchor="middle" font-size="13">{title}</text>"#, width / 2.0);
    for (i, panel) in panels.iter().enumerate() {
        let x0 = MARGIN + i as f64 * (W + MARGIN);
        let y0 = 1.5 * MARGIN;
        let (xmin, xmax) = range(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (_, ymax) = range(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1 + p.2)));
        let ymin = 0.0;
        let ymax = ymax.max(1e-9) * 1.05;
        let px = |x: f64| x0 + (x - xmin) / (xmax - xmin) * W;
        let py = |y: f64| y0 + H - (y - ymin) / (ymax - ymin) * H;
        let _ = writeln!(s, r#"<rect x="{x0:.1}" y="{y0:.1}" width="{W:.1}" height="{H:.1}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x0 + W / 2.0, y0 - 6.0, panel.title);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#, x0 + W / 2.0, y0 + H + 28.0);
        for (v, anchor) in [(xmin, "start"), (xmax, "end")] {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{v:.3}</text>"#, px(v), y0 + H + 14.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ymax:.3}</text>"#, x0 - 3.0, y0 + 8.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#, x0 - 3.0, y0 + H);
        if i == 0 {
            let _ = writeln!(
                s,
                r#"<text transform="translate(12 {:.1}) rotate(-90)" text-anchor="middle">{y_label}</text>"#,
                y0 + H / 2.0
            );
        }
        for (k, series) in panel.series.iter().enumerate() {
            let path: Vec<String> = series
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
                .collect();
            let dash = if series.dashed { r#" stroke-dasharray="5 3""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                path.join(" "),
                series.color
            );
            for p in series.points.iter().filter(|p| p.1.is_finite() && p.2.is_finite()) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{}"/>"#,
                    py(p.1 - p.2),
                    py(p.1 + p.2),
                    series.color,
                    x = px(p.0)
                );
            }
            let ly = y0 + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" fill="{}">{}</text>"#,
                x0 + 6.0,
                series.color,
                series.label
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
