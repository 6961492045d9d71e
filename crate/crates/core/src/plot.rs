//! Dependency-free SVG scatter plot with a fitted regression line overlay.

/// Renders points plus the line `y = slope * x + intercept` over the data's
/// x-range. The fit is the document's single `<polyline>`; axes are `<line>`
/// elements, so the structure is testable as XML.
pub fn scatter_with_fit_svg(
    points: &[(f64, f64)],
    slope: f64,
    intercept: f64,
    x_label: &str,
    y_label: &str,
    title: &str,
) -> String {
    const W: f64 = 800.0;
    const H: f64 = 560.0;
    const MARGIN: f64 = 64.0;

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    // Include the fit endpoints so the line never leaves the viewport.
    for x in [x_min, x_max] {
        let y = slope * x + intercept;
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).abs().max(1e-9);
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    let (x_min, x_max) = pad(x_min, x_max);
    let (y_min, y_max) = pad(y_min, y_max);

    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y_min) / (y_max - y_min) * (H - 2.0 * MARGIN);

    let esc = |s: &str| {
        s.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        esc(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{m:.1}\" y1=\"{t:.1}\" x2=\"{m:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN
    ));
    // Range labels.
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
        MARGIN,
        H - MARGIN + 16.0,
        x_min
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
        W - MARGIN,
        H - MARGIN + 16.0,
        x_max
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
        MARGIN - 6.0,
        H - MARGIN,
        y_min
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.2}</text>\n",
        MARGIN - 6.0,
        MARGIN + 4.0,
        y_max
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        W / 2.0,
        H - 18.0,
        esc(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {0:.1})\">{1}</text>\n",
        H / 2.0,
        esc(y_label)
    ));

    for &(x, y) in points {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n",
            sx(x),
            sy(y)
        ));
    }

    let y0 = slope * x_min + intercept;
    let y1 = slope * x_max + intercept;
    svg.push_str(&format!(
        "<polyline points=\"{:.2},{:.2} {:.2},{:.2}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\"/>\n",
        sx(x_min),
        sy(y0),
        sx(x_max),
        sy(y1)
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contains_one_polyline_and_all_points() {
        let points: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.5 * i as f64 + 1.0)).collect();
        let svg = scatter_with_fit_svg(&points, 0.5, 1.0, "x", "y", "fit");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 20);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn escapes_labels() {
        let svg = scatter_with_fit_svg(&[(0.0, 0.0), (1.0, 1.0)], 1.0, 0.0, "a<b", "c&d", "t>u");
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("c&amp;d"));
        assert!(svg.contains("t&gt;u"));
    }
}
