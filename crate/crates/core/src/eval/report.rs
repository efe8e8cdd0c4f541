use std::fmt::Write;

use super::corrupt::Corruption;
use super::ood::OodReport;
use super::sweep::SweepResult;

fn corruption_label(c: &Corruption) -> String {
    match c {
        Corruption::Mcar { .. } => "mcar".to_string(),
        Corruption::Mar { pattern, .. } => format!("mar:{}", pattern.name()),
    }
}

/// Comma-separated table with one row per level and a mean/std column pair
/// per metric. A leading `#` line records the model, corruption and seeds.
pub fn sweep_table(r: &SweepResult) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    writeln!(
        s,
        "# model={} corruption={} seeds={}",
        r.model,
        corruption_label(&r.corruption),
        seeds.join(";")
    )
    .unwrap();
    let mut header = vec!["level".to_string()];
    if let Some(first) = r.levels.first() {
        for (m, _) in &first.metrics {
            header.push(format!("{}_mean", m.name()));
            header.push(format!("{}_std", m.name()));
        }
    }
    writeln!(s, "{}", header.join(",")).unwrap();
    for l in &r.levels {
        let mut row = vec![format!("{:.2}", l.level)];
        for (_, st) in &l.metrics {
            row.push(format!("{}", st.mean));
            row.push(format!("{}", st.std));
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

/// Histogram counts of in- and out-of-distribution scores.
pub fn ood_table(r: &OodReport) -> String {
    let mut s = String::new();
    writeln!(s, "# auroc={}", r.auroc).unwrap();
    writeln!(s, "bin_low,bin_high,in_count,out_count").unwrap();
    let h = &r.histogram;
    for k in 0..h.in_counts.len() {
        writeln!(
            s,
            "{},{},{},{}",
            h.edges[k],
            h.edges[k + 1],
            h.in_counts[k],
            h.out_counts[k]
        )
        .unwrap();
    }
    s
}

/// One named polyline of a plot.
pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A standalone SVG line chart with axes, ticks and a legend.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter()).filter(finite);
    let ys = series.iter().flat_map(|s| s.y.iter()).filter(finite);
    let range = |it: &mut dyn Iterator<Item = &f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = range(&mut xs.into_iter());
    let (y0, y1) = range(&mut ys.into_iter());
    let pw = w - left - right;
    let ph = h - top - bottom;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            px(xv),
            top + ph + 18.0,
            xv
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            yv
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(ser.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 16.0 * k as f64 + 8.0;
        writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            escape(ser.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
