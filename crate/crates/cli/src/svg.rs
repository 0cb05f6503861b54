//! Minimal SVG output: scatter plots of 2-D points and line charts.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 30.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="18" font-size="13" text-anchor="middle">{}</text>"#, W / 2.0, escape(title))
        .unwrap();
    s
}

/// Scatter plot of row-major 2-D `points`, coloured by `labels` if given.
pub fn scatter(points: &[f64], labels: Option<&[usize]>, title: &str) -> String {
    let (x0, x1) = extent(points.iter().step_by(2).copied());
    let (y0, y1) = extent(points.iter().skip(1).step_by(2).copied());
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = header(title);
    for (i, p) in points.chunks_exact(2).enumerate() {
        if !(p[0].is_finite() && p[1].is_finite()) {
            continue;
        }
        let color = labels.map_or(PALETTE[0], |l| PALETTE[l[i] % PALETTE.len()]);
        writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#, sx(p[0]), sy(p[1]))
            .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per `(name, ys)` series against shared `xs`; non-finite
/// values break the line.
pub fn line_chart(xs: &[f64], series: &[(&str, Vec<f64>)], title: &str) -> String {
    let (x0, x1) = extent(xs.iter().copied());
    let (y0, y1) = extent(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = header(title);
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut segment = Vec::new();
        let flush = |seg: &mut Vec<String>, s: &mut String| {
            if seg.len() > 1 {
                writeln!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, seg.join(" ")).unwrap();
            }
            seg.clear();
        };
        for (&x, &y) in xs.iter().zip(ys) {
            if y.is_finite() {
                segment.push(format!("{:.2},{:.2}", sx(x), sy(y)));
            } else {
                flush(&mut segment, &mut s);
            }
        }
        flush(&mut segment, &mut s);
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            PAD + 4.0,
            PAD + 14.0 * (k + 1) as f64,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_has_one_circle_per_finite_point() {
        let s = scatter(&[0.0, 0.0, 1.0, 2.0, f64::NAN, 0.0], Some(&[0, 1, 0]), "a < b");
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a &lt; b"));
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn lines_break_at_missing_values() {
        let s = line_chart(&[0.0, 1.0, 2.0, 3.0, 4.0], &[("acc", vec![0.1, 0.2, f64::NAN, 0.4, 0.5])], "t");
        assert_eq!(s.matches("<polyline").count(), 2);
        let empty = scatter(&[], None, "empty");
        assert!(!empty.contains("<circle"));
    }
}
