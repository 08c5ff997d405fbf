//! Standalone SVG figures of simulation results.

use std::fmt::Write;

use cmr_core::simulate::SimMetrics;

const PANEL_W: f64 = 360.0;
const ROW_H: f64 = 18.0;
const LABEL_W: f64 = 230.0;
const MARGIN: f64 = 30.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn row_label(m: &SimMetrics) -> String {
    let mut label = format!("{} {}", m.method, m.family);
    if m.weight_treatment != "n/a" {
        label.push_str(&format!(" ({})", m.weight_treatment));
    }
    if m.misspec != "none" {
        label.push_str(&format!(" {}", m.misspec));
    }
    label
}

struct Panel<'a> {
    id: &'a str,
    title: &'a str,
    reference: f64,
    value: fn(&SimMetrics) -> f64,
}

/// Dot-chart panels of percent bias and CI coverage, one row per
/// (method, weight treatment, family, misspecification).
pub fn metrics_figure(rows: &[SimMetrics], level: f64) -> String {
    let panels = [
        Panel {
            id: "bias",
            title: "Empirical bias (%)",
            reference: 0.0,
            value: |m| m.bias_pct,
        },
        Panel {
            id: "coverage",
            title: "CI coverage (%)",
            reference: 100.0 * level,
            value: |m| m.coverage_pct,
        },
    ];
    let height = 2.0 * MARGIN + ROW_H * (rows.len().max(1) as f64 + 1.0);
    let width = LABEL_W + PANEL_W * panels.len() as f64 + MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (i, m) in rows.iter().enumerate() {
        let y = MARGIN + ROW_H * (i as f64 + 1.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, LABEL_W - 8.0, escape(&row_label(m)));
    }
    for (k, p) in panels.iter().enumerate() {
        let x0 = LABEL_W + PANEL_W * k as f64;
        let values: Vec<f64> = rows.iter().map(p.value).filter(|v| v.is_finite()).collect();
        let lo = values.iter().copied().fold(p.reference, f64::min);
        let hi = values.iter().copied().fold(p.reference, f64::max);
        let pad = ((hi - lo) * 0.1).max(1.0);
        let (lo, hi) = (lo - pad, hi + pad);
        let sx = |v: f64| x0 + 10.0 + (v - lo) / (hi - lo) * (PANEL_W - 20.0);
        let bottom = height - MARGIN;
        let _ = writeln!(out, r#"<g class="panel" id="panel-{}">"#, p.id);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#, x0 + PANEL_W / 2.0, MARGIN - 10.0, escape(p.title));
        let _ = writeln!(out, r##"<rect x="{x0}" y="{MARGIN}" width="{PANEL_W}" height="{}" fill="none" stroke="#999"/>"##, bottom - MARGIN);
        let r = sx(p.reference);
        let _ = writeln!(out, r##"<line x1="{r}" y1="{MARGIN}" x2="{r}" y2="{bottom}" stroke="#c33" stroke-dasharray="4 3"/>"##);
        for (i, m) in rows.iter().enumerate() {
            let v = (p.value)(m);
            if v.is_finite() {
                let y = MARGIN + ROW_H * (i as f64 + 1.0) - 4.0;
                let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{y}" r="4" fill="#246"><title>{v:.2}</title></circle>"##, sx(v));
            }
        }
        for t in [lo, (lo + hi) / 2.0, hi] {
            let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{t:.1}</text>"#, sx(t), bottom + 14.0);
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side histograms of true and reported counts. Counts above the
/// 99th percentile of the true counts share the last bar.
pub fn heaping_histogram(true_counts: &[u64], reported: &[u64]) -> String {
    let mut sorted = true_counts.to_vec();
    sorted.sort_unstable();
    let cap = sorted.get(sorted.len() * 99 / 100).copied().unwrap_or(0).max(1) as usize;
    let tally = |v: &[u64]| {
        let mut bins = vec![0usize; cap + 1];
        for &y in v {
            bins[(y as usize).min(cap)] += 1;
        }
        bins
    };
    let panels = [("true", "True count", tally(true_counts)), ("reported", "Reported count", tally(reported))];
    let ymax = panels.iter().flat_map(|p| p.2.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let (pw, ph) = (420.0, 240.0);
    let width = 2.0 * pw + 3.0 * MARGIN;
    let height = ph + 3.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (k, (id, title, bins)) in panels.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (pw + MARGIN);
        let base = MARGIN + ph;
        let bw = pw / bins.len() as f64;
        let _ = writeln!(out, r#"<g class="panel" id="panel-{id}">"#);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{title}</text>"#, x0 + pw / 2.0, MARGIN - 10.0);
        for (y, &c) in bins.iter().enumerate() {
            let h = c as f64 / ymax * ph;
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#468"><title>{y}: {c}</title></rect>"##,
                x0 + y as f64 * bw,
                base - h,
                (bw - 0.5).max(0.5)
            );
        }
        for y in (0..=cap).step_by(10) {
            let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{y}</text>"#, x0 + (y as f64 + 0.5) * bw, base + 14.0);
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
