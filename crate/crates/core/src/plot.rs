//! Minimal SVG line and scatter plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Marker for one scatter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Circle,
    Square,
    Triangle,
    Cross,
}

pub struct ScatterGroup<'a> {
    pub name: String,
    pub points: &'a [(f64, f64)],
    pub glyph: Glyph,
    pub color_index: usize,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            return Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if f.x1 <= f.x0 {
            f.x1 = f.x0 + 1.0;
        }
        if f.y1 <= f.y0 {
            f.y1 = f.y0 + 1.0;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>
<text x="14" y="{}" text-anchor="middle" font-size="11" transform="rotate(-90 14 {})">{}</text>
<text x="{MARGIN}" y="{}" font-size="9">{:.3}</text>
<text x="{r}" y="{}" font-size="9" text-anchor="end">{:.3}</text>
<text x="{}" y="{b}" font-size="9" text-anchor="end">{:.3}</text>
<text x="{}" y="{MARGIN}" font-size="9" text-anchor="end">{:.3}</text>
"#,
        WIDTH / 2.0,
        escape(title),
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(xlabel),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel),
        HEIGHT - MARGIN + 14.0,
        f.x0,
        HEIGHT - MARGIN + 14.0,
        f.x1,
        MARGIN - 4.0,
        f.y0,
        MARGIN - 4.0,
        f.y1,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.x.iter().copied().zip(s.y.iter().copied())));
    let mut out = String::new();
    header(&mut out, title, &frame, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> =
            s.x.iter()
                .zip(s.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                .collect();
        let _ =
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, pts.join(" "));
        legend(&mut out, i, s.name, color);
    }
    out.push_str("</svg>\n");
    out
}

fn legend(out: &mut String, i: usize, name: &str, color: &str) {
    let y = MARGIN + 14.0 * i as f64;
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{y:.1}" font-size="10" fill="{color}" text-anchor="end">{}</text>"#,
        WIDTH - MARGIN,
        escape(name)
    );
}

fn glyph(out: &mut String, g: Glyph, x: f64, y: f64, color: &str) {
    let _ = match g {
        Glyph::Circle => writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#),
        Glyph::Square => writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="none" stroke="{color}"/>"#,
            x - 3.0,
            y - 3.0
        ),
        Glyph::Triangle => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - 4.0,
            x - 3.5,
            y + 3.0,
            x + 3.5,
            y + 3.0
        ),
        Glyph::Cross => writeln!(
            out,
            r#"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="{color}"/>"#,
            x - 3.0,
            y - 3.0,
            x + 3.0,
            y + 3.0,
            x - 3.0,
            y + 3.0,
            x + 3.0,
            y - 3.0
        ),
    };
}

pub fn scatter_plot(title: &str, xlabel: &str, ylabel: &str, groups: &[ScatterGroup<'_>]) -> String {
    let frame = Frame::fit(groups.iter().flat_map(|g| g.points.iter().copied()));
    let mut out = String::new();
    header(&mut out, title, &frame, xlabel, ylabel);
    for (i, g) in groups.iter().enumerate() {
        let color = COLORS[g.color_index % COLORS.len()];
        for &(x, y) in g.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            glyph(&mut out, g.glyph, frame.px(x), frame.py(y), color);
        }
        legend(&mut out, i, &g.name, color);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let x = [0.0, 1.0, 2.0];
        let svg = line_plot("t<1>", "f", "v", &[Series { name: "a", x: &x, y: &x }]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t&lt;1&gt;"));
        let pts = [(0.0, 0.0), (1.0, 2.0)];
        let svg = scatter_plot(
            "s",
            "x",
            "y",
            &[ScatterGroup { name: "g".into(), points: &pts, glyph: Glyph::Triangle, color_index: 1 }],
        );
        assert_eq!(svg.matches("<polygon").count(), 2);
    }
}
