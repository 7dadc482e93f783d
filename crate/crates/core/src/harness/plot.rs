//! Minimal SVG line chart for sweep tables.

use std::fmt::Write;

use super::sweep::SweepRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn polyline(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> f64, lo: f64, hi: f64) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    rows.iter()
        .map(|r| {
            let x = PAD + r.lambda * (W - 2.0 * PAD);
            let y = H - PAD - (pick(r) - lo) / span * (H - 2.0 * PAD);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders both loss columns against λ.
pub fn sweep_svg(rows: &[SweepRow], label_a: &str, label_b: &str) -> String {
    let values = rows.iter().flat_map(|r| [r.loss_model_a, r.loss_model_b]).filter(|v| v.is_finite());
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{y} H{x}" fill="none" stroke="black"/>"#,
        y = H - PAD,
        x = W - PAD
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let x = PAD + f * (W - 2.0 * PAD);
        let y = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{f:.2}</text>"#, H - PAD + 18.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{:.3}</text>"#,
            PAD - 6.0,
            lo + f * (hi - lo)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">lambda</text>"#, W / 2.0, H - 10.0);
    let series = [("#1f77b4", label_a, polyline(rows, |r| r.loss_model_a, lo, hi)),
        ("#d62728", label_b, polyline(rows, |r| r.loss_model_b, lo, hi))];
    for (k, (color, label, pts)) in series.iter().enumerate() {
        let _ = writeln!(s, r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>"#);
        let y = PAD + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" fill="{color}">{}</text>"#, W - PAD - 120.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
