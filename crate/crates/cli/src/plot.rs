//! Minimal static SVG charts: line plots and histograms.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Equal-width bins over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len().max(1) as f64
    }
}

/// Histogram of the finite values. A set with no spread falls in one bin.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Histogram { lo: 0.0, hi: 0.0, counts: Vec::new() };
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    histogram_in(&finite, lo, hi, bins)
}

/// Histogram over a fixed range; values outside it are dropped.
pub fn histogram_in(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    if hi <= lo {
        let n = values.iter().filter(|v| **v == lo).count();
        return Histogram { lo, hi, counts: vec![n] };
    }
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    let w = (hi - lo) / bins as f64;
    for &v in values {
        if v.is_finite() && (lo..=hi).contains(&v) {
            let k = (((v - lo) / w) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    Histogram { lo, hi, counts }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (mut x0, mut x1) = bounds(xs);
        let (mut y0, mut y1) = bounds(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn open_svg(s: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    for (v, anchor, x, y) in [
        (f.x0, "start", l, b + 16.0),
        (f.x1, "end", r, b + 16.0),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, fmt_tick(v));
    }
    for (v, y) in [(f.y0, b), (f.y1, t)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, y + 4.0, fmt_tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(s: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let x = WIDTH - MARGIN - 150.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{c}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(l));
    }
}

/// Line chart with one polyline per series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let f = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut s = String::new();
    open_svg(&mut s, title, xlabel, ylabel, &f);
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    if series.len() > 1 {
        legend(&mut s, &series.iter().map(|x| x.label.as_str()).collect::<Vec<_>>());
    }
    s.push_str("</svg>\n");
    s
}

/// Overlaid histograms sharing one binning; bar heights are fractions.
pub fn histogram_chart(title: &str, xlabel: &str, hists: &[(String, Histogram)]) -> String {
    let fracs: Vec<Vec<f64>> = hists
        .iter()
        .map(|(_, h)| h.counts.iter().map(|&c| c as f64 / h.total().max(1) as f64).collect())
        .collect();
    let xs = hists.iter().flat_map(|(_, h)| [h.lo, h.hi]);
    let ys = fracs.iter().flatten().copied().chain([0.0]);
    let f = Frame::new(xs, ys);
    let mut s = String::new();
    open_svg(&mut s, title, xlabel, "fraction", &f);
    for (i, ((_, h), fr)) in hists.iter().zip(&fracs).enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let w = if h.counts.len() == 1 && h.hi <= h.lo {
            (f.x1 - f.x0) / 50.0
        } else {
            h.bin_width()
        };
        for (k, &y) in fr.iter().enumerate() {
            let left = if h.hi <= h.lo { h.lo - w / 2.0 } else { h.lo + k as f64 * w };
            let (x0, x1) = (f.px(left), f.px(left + w));
            let (yt, yb) = (f.py(y), f.py(0.0));
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.5"/>"#,
                x0,
                yt,
                (x1 - x0).max(0.5),
                (yb - yt).max(0.0)
            );
        }
    }
    legend(&mut s, &hists.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polyline_points(svg: &str) -> Vec<usize> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let start = l.find("points=\"").unwrap() + 8;
                let body = &l[start..l[start..].find('"').unwrap() + start];
                body.split_whitespace().count()
            })
            .collect()
    }

    #[test]
    fn curve_has_one_point_per_row() {
        for n in [1, 2, 17] {
            let s = Series {
                label: "r".into(),
                points: (0..n).map(|i| (i as f64, (i * i) as f64)).collect(),
            };
            let svg = line_chart("t", "x", "y", &[s]);
            assert_eq!(polyline_points(&svg), vec![n]);
        }
    }

    #[test]
    fn constant_weights_fill_a_single_bin() {
        let h = histogram(&[0.25; 40], 20);
        assert_eq!(h.counts, vec![40]);
        let svg = histogram_chart("w", "weight", &[("w".into(), h)]);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 1);
    }

    #[test]
    fn histogram_counts_every_value() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let h = histogram(&v, 10);
        assert_eq!(h.total(), 100);
        assert_eq!(h.counts, vec![10; 10]);
        let h = histogram_in(&[-1.0, 0.5, 2.0], 0.0, 1.0, 4);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = line_chart("a<b", "x", "y", &[]);
        assert!(svg.contains("a&lt;b"));
    }
}
