//! A small SVG line-plot emitter: axes with ticks, polylines, a shaded band
//! and labelled horizontal reference lines.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Band {
    pub label: String,
    pub color: &'static str,
    pub xs: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HLine {
    pub label: String,
    pub color: &'static str,
    pub y: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Free text stored in the SVG `<desc>` element.
    pub description: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    pub hlines: Vec<HLine>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly five round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Plot {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        let mut see = |px: f64, py: f64| {
            if px.is_finite() && py.is_finite() {
                x = (x.0.min(px), x.1.max(px));
                y = (y.0.min(py), y.1.max(py));
            }
        };
        for s in &self.series {
            s.xs.iter().zip(&s.ys).for_each(|(a, b)| see(*a, *b));
        }
        for b in &self.bands {
            for k in 0..b.xs.len() {
                see(b.xs[k], b.lo[k]);
                see(b.xs[k], b.hi[k]);
            }
        }
        if !x.0.is_finite() {
            x = (0.0, 1.0);
            y = (0.0, 1.0);
        }
        for h in &self.hlines {
            if h.y.is_finite() {
                y = (y.0.min(h.y), y.1.max(h.y));
            }
        }
        if x.1 <= x.0 {
            x = (x.0 - 0.5, x.0 + 0.5);
        }
        if y.1 <= y.0 {
            let pad = if y.0 == 0.0 { 1.0 } else { 0.1 * y.0.abs() };
            y = (y.0 - pad, y.0 + pad);
        }
        let pad = 0.05 * (y.1 - y.0);
        (x.0, x.1, y.0 - pad, y.1 + pad)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, "<desc>{}</desc>", escape(&self.description));
        let _ = writeln!(
            o,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        // axes and ticks
        let _ = writeln!(
            o,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in ticks(x0, x1) {
            let px = sx(t);
            let _ = writeln!(
                o,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 19.0,
                tick_label(t)
            );
        }
        for t in ticks(y0, y1) {
            let py = sy(t);
            let _ = writeln!(
                o,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                LEFT + pw,
                LEFT - 8.0,
                py + 4.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        let mut legend: Vec<(String, &'static str, &'static str)> = vec![];
        for b in &self.bands {
            let mut pts: Vec<String> = (0..b.xs.len())
                .map(|k| format!("{:.2},{:.2}", sx(b.xs[k]), sy(b.hi[k])))
                .collect();
            pts.extend(
                (0..b.xs.len())
                    .rev()
                    .map(|k| format!("{:.2},{:.2}", sx(b.xs[k]), sy(b.lo[k]))),
            );
            let _ = writeln!(
                o,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                pts.join(" "),
                b.color
            );
            legend.push((b.label.clone(), b.color, "band"));
        }
        for h in &self.hlines {
            if !h.y.is_finite() {
                continue;
            }
            let py = sy(h.y);
            let _ = writeln!(
                o,
                r#"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="{}" stroke-width="1"/>"#,
                LEFT + pw,
                h.color
            );
            legend.push((h.label.clone(), h.color, "thin"));
        }
        for s in &self.series {
            let pts: Vec<String> =
                s.xs.iter()
                    .zip(&s.ys)
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                    .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                o,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
                pts.join(" "),
                s.color
            );
            legend.push((
                s.label.clone(),
                s.color,
                if s.dashed { "dashed" } else { "line" },
            ));
        }

        let lx = WIDTH - RIGHT + 12.0;
        for (i, (label, color, style)) in legend.iter().enumerate() {
            let ly = TOP + 10.0 + 20.0 * i as f64;
            match *style {
                "band" => {
                    let _ = write!(
                        o,
                        r#"<rect x="{lx}" y="{:.1}" width="24" height="10" fill="{color}" fill-opacity="0.25"/>"#,
                        ly - 5.0
                    );
                }
                _ => {
                    let (w, dash) = match *style {
                        "thin" => (1, ""),
                        "dashed" => (2, r#" stroke-dasharray="6 4""#),
                        _ => (2, ""),
                    };
                    let _ = write!(
                        o,
                        r#"<line x1="{lx}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="{w}"{dash}/>"#,
                        lx + 24.0
                    );
                }
            }
            let _ = writeln!(
                o,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 30.0,
                ly + 4.0,
                escape(label)
            );
        }
        o.push_str("</svg>\n");
        o
    }
}
