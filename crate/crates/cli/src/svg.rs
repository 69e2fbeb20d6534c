//! Minimal hand-rolled SVG line plots (no plotting dependency).

/// One named series; NaN values break the polyline (e.g. unvoiced gaps).
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub values: &'a [f64],
}

const W: f64 = 960.0;
const H: f64 = 480.0;
const MARGIN: f64 = 50.0;

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x_of = |i: usize| MARGIN + (W - 2.0 * MARGIN) * i as f64 / (n.max(2) - 1) as f64;
    let y_of = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
        W / 2.0,
        H - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        H / 2.0,
        H / 2.0
    ));
    // y tick labels
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{:.1}</text>\n",
            MARGIN - 6.0,
            y_of(v) + 3.0,
            v
        ));
    }
    for (si, s) in series.iter().enumerate() {
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (i, &v) in s.values.iter().enumerate() {
            if v.is_finite() {
                segments.last_mut().unwrap().push((x_of(i), y_of(v)));
            } else if !segments.last().unwrap().is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|s| s.len() >= 2) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                s.color,
                pts.join(" ")
            ));
        }
        let ly = MARGIN + 16.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{ly}\" x2=\"{x2}\" y2=\"{ly}\" stroke=\"{c}\" stroke-width=\"2\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-size=\"11\">{l}</text>\n",
            x = W - MARGIN - 120.0,
            x2 = W - MARGIN - 100.0,
            c = s.color,
            tx = W - MARGIN - 94.0,
            ty = ly + 4.0,
            l = s.label
        ));
    }
    out.push_str("</svg>\n");
    out
}
