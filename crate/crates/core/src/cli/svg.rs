//! Minimal SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn dashed; used for analytic reference values.
    pub dashed: bool,
}

impl Series {
    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.to_string(), points, dashed: false }
    }

    pub fn reference(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.to_string(), points, dashed: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn linear_label(v: f64) -> String {
    if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Tick positions (in transformed coordinates) with their labels. Log axes
/// spanning at least one decade get ticks on whole decades.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    if log && hi - lo >= 1.0 {
        let (first, last) = (lo.ceil() as i64, hi.floor() as i64);
        let stride = ((last - first) as usize / TICKS).max(1) as i64;
        return (first..=last).step_by(stride as usize).map(|e| (e as f64, format!("1e{e}"))).collect();
    }
    (0..=TICKS)
        .map(|i| {
            let v = lo + (i as f64 / TICKS as f64) * (hi - lo);
            let shown = if log { 10f64.powf(v) } else { v };
            (v, linear_label(shown))
        })
        .collect()
}

/// Axis range `[lo, hi]` of the transformed coordinates, widened when degenerate.
fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

impl Chart {
    /// Renders the chart. Points that cannot be shown on a log axis
    /// (non-positive) or are non-finite are dropped.
    pub fn to_svg(&self) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let series: Vec<(&Series, Vec<(f64, f64)>)> = self
            .series
            .iter()
            .map(|s| {
                let pts = s
                    .points
                    .iter()
                    .map(|&(x, y)| (tx(x), ty(y)))
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .collect();
                (s, pts)
            })
            .collect();

        let all = || series.iter().flat_map(|(_, p)| p.iter().copied());
        let (x0, x1) = range(all().map(|p| p.0)).unwrap_or((0.0, 1.0));
        let (y0, y1) = range(all().map(|p| p.1)).unwrap_or((0.0, 1.0));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (xv, label) in ticks(x0, x1, self.log_x) {
            let px = sx(xv);
            let _ = writeln!(
                out,
                r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
                TOP + ph
            );
            let _ = writeln!(
                out,
                r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                TOP + ph + 18.0
            );
        }
        for (yv, label) in ticks(y0, y1, self.log_y) {
            let py = sy(yv);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/>"##,
                LEFT + pw
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                LEFT - 6.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (idx, (s, pts)) in series.iter().enumerate() {
            let color = COLORS[idx % COLORS.len()];
            if !pts.is_empty() {
                let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                    coords.join(" ")
                );
            }
            let ly = TOP + 16.0 + 16.0 * idx as f64;
            let lx = LEFT + pw - 170.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                ly - 4.0,
                lx + 20.0,
                ly - 4.0
            );
            let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 26.0, escape(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(log_x: bool, points: Vec<(f64, f64)>) -> Chart {
        Chart {
            title: "a < b & c".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            log_x,
            log_y: false,
            series: vec![Series::line("s", points)],
        }
    }

    #[test]
    fn renders_well_formed_polyline() {
        let svg = chart(false, vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)]).to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a &lt; b &amp; c"));
    }

    #[test]
    fn log_axis_drops_nonpositive_points() {
        let svg = chart(true, vec![(0.0, 1.0), (1.0, 2.0), (10.0, 3.0)]).to_svg();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
        assert!(svg.contains(">1e0<") && svg.contains(">1e1<"));
    }

    #[test]
    fn log_ticks_sit_on_decades() {
        let t = ticks(-0.3, 5.2, true);
        let labels: Vec<&str> = t.iter().map(|(_, l)| l.as_str()).collect();
        assert_eq!(labels, ["1e0", "1e1", "1e2", "1e3", "1e4", "1e5"]);
        let narrow = ticks(0.1, 0.5, true);
        assert_eq!(narrow.len(), TICKS + 1);
    }

    #[test]
    fn degenerate_and_empty_series_do_not_panic() {
        let svg = chart(false, vec![(1.0, 1.0)]).to_svg();
        assert!(!svg.contains("NaN"));
        let svg = chart(false, Vec::new()).to_svg();
        assert!(!svg.contains("NaN") && !svg.contains("<polyline"));
    }
}
