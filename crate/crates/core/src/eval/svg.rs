use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

/// Standalone SVG line chart; x is the step index. Non-finite points (and
/// non-positive ones on a log axis) are skipped.
pub fn line_chart(title: &str, series: &[Series], log_y: bool) -> String {
    let tf = |v: f64| if log_y { v.log10() } else { v };
    let usable = |v: &f64| v.is_finite() && (!log_y || *v > 0.0);
    let points = series.iter().flat_map(|s| s.values.iter().filter(|v| usable(v)).map(|&v| tf(v)));
    let (mut lo, mut hi) = points.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let steps = series.iter().map(|s| s.values.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (steps - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (tf(v) - lo) / (hi - lo);

    let mut out = String::new();
    let w = &mut out;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    writeln!(
        w,
        r#"<path d="M{MARGIN} {MARGIN} L{MARGIN} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .unwrap();
    let axis = |v: f64| if log_y { format!("1e{v:.1}") } else { format!("{v:.3}") };
    writeln!(w, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#, MARGIN, axis(hi)).unwrap();
    writeln!(w, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#, HEIGHT - MARGIN, axis(lo)).unwrap();
    writeln!(w, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#, WIDTH - MARGIN, HEIGHT - MARGIN + 15.0, steps - 1).unwrap();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (i, v) in s.values.iter().enumerate() {
            if !usable(v) {
                pen_down = false;
                continue;
            }
            write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, x(i), y(*v)).unwrap();
            pen_down = true;
        }
        writeln!(w, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.2"/>"#, d.trim_end()).unwrap();
        writeln!(
            w,
            r#"<text x="{}" y="{}" fill="{color}" font-family="sans-serif" font-size="11">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            MARGIN + 14.0 * k as f64,
            escape(&s.label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_skips_gaps() {
        let s = vec![
            Series { label: "a<b".into(), values: vec![3.0, 2.0, f64::INFINITY, 1.0] },
            Series { label: "flat".into(), values: vec![0.0; 4] },
        ];
        let one = line_chart("loss", &s, true);
        assert_eq!(one, line_chart("loss", &s, true));
        assert!(one.starts_with("<svg") && one.ends_with("</svg>\n"));
        assert!(one.contains("a&lt;b"));
        assert!(!one.contains("NaN") && !one.contains("inf"));
        assert!(line_chart("empty", &[], false).contains("</svg>"));
    }
}
