//! Minimal line-plot emitter.
//!
//! Series are drawn inside a group whose transform maps data coordinates to
//! pixels, so polyline points carry the data values verbatim (the same text
//! that appears in the source CSV).

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One polyline; `points` hold `(x, y)` as printed in the input.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Forced y range; otherwise the data range.
    pub y_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn parsed(points: &[(String, String)], pick: fn(&(String, String)) -> &String) -> Vec<f64> {
    points.iter().filter_map(|p| pick(p).parse().ok()).collect()
}

impl Plot {
    pub fn render(&self) -> String {
        let xs: Vec<f64> = self.series.iter().flat_map(|s| parsed(&s.points, |p| &p.0)).collect();
        let ys: Vec<f64> = self.series.iter().flat_map(|s| parsed(&s.points, |p| &p.1)).collect();
        let (x0, x1) = range(xs.into_iter());
        let (y0, y1) = self.y_range.unwrap_or_else(|| range(ys.into_iter()));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = pw / (x1 - x0);
        let sy = ph / (y1 - y0);

        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        )
        .unwrap();
        writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        // axis extremes as tick labels
        let bottom = TOP + ph;
        writeln!(
            out,
            r#"<text x="{LEFT}" y="{}" text-anchor="middle">{x0}</text>"#,
            bottom + 16.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{x1}</text>"#,
            LEFT + pw,
            bottom + 16.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{bottom}" text-anchor="end">{y0:.4}</text>"#,
            LEFT - 6.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{y1:.4}</text>"#,
            LEFT - 6.0,
            TOP + 10.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            bottom + 36.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();

        writeln!(
            out,
            r#"<g transform="translate({} {}) scale({sx} {})">"#,
            LEFT - x0 * sx,
            bottom + y0 * sy,
            -sy
        )
        .unwrap();
        for (i, series) in self.series.iter().enumerate() {
            let points: Vec<String> = series.points.iter().map(|(x, y)| format!("{x},{y}")).collect();
            writeln!(
                out,
                r#"<polyline data-series="{}" fill="none" stroke="{}" stroke-width="1.5" vector-effect="non-scaling-stroke" points="{}"/>"#,
                escape(&series.name),
                PALETTE[i % PALETTE.len()],
                points.join(" ")
            )
            .unwrap();
        }
        writeln!(out, "</g>").unwrap();

        for (i, series) in self.series.iter().enumerate() {
            let y = TOP + 12.0 + 18.0 * i as f64;
            let x = LEFT + pw + 12.0;
            writeln!(
                out,
                r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{y}">{}</text>"#,
                y - 4.0,
                x + 20.0,
                y - 4.0,
                PALETTE[i % PALETTE.len()],
                x + 26.0,
                escape(&series.name)
            )
            .unwrap();
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_verbatim() {
        let plot = Plot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "a<b".into(),
                points: vec![("0".into(), "0.125".into()), ("1".into(), "1e-7".into())],
            }],
            y_range: None,
        };
        let svg = plot.render();
        assert!(svg.contains(r#"points="0,0.125 1,1e-7""#));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn flat_series_gets_nonzero_range() {
        assert_eq!(range([2.0, 2.0].into_iter()), (1.5, 2.5));
        assert_eq!(range(std::iter::empty()), (0.0, 1.0));
    }
}
