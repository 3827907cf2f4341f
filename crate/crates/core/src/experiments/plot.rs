//! Static SVG box plots: one panel per region, one cluster per input
//! selection, one box per FDC scenario.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary (linear-interpolation quartiles); `None` when empty.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        n: v.len(),
    })
}

/// `(label, values)` for a single box.
pub type LabeledValues = (String, Vec<f64>);

/// One panel. `clusters` are `(selection, [(scenario, values)])`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGroup {
    pub title: String,
    pub clusters: Vec<(String, Vec<LabeledValues>)>,
}

const PALETTE: [&str; 6] = [
    "#999999", "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Render panels stacked vertically; the y axis is clipped to `[y_min, 1]`.
pub fn render_boxplot_svg(metric: &str, panels: &[BoxGroup], y_min: f64) -> String {
    let (panel_h, top, left, box_w, gap) = (220.0, 30.0, 60.0, 14.0, 24.0);
    let mut scenarios: Vec<&str> = Vec::new();
    for p in panels {
        for (_, boxes) in &p.clusters {
            for (s, _) in boxes {
                if !scenarios.contains(&s.as_str()) {
                    scenarios.push(s);
                }
            }
        }
    }
    let max_boxes = panels
        .iter()
        .map(|p| {
            p.clusters
                .iter()
                .map(|(_, b)| b.len() as f64 * box_w + gap)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let width = left + max_boxes + 160.0;
    let height = top + panels.len() as f64 * (panel_h + 40.0) + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (k, name) in scenarios.iter().enumerate() {
        let y = top + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            width - 150.0,
            y,
            PALETTE[k % PALETTE.len()],
            width - 135.0,
            y + 9.0,
            esc(name)
        );
    }
    for (pi, panel) in panels.iter().enumerate() {
        let y0 = top + pi as f64 * (panel_h + 40.0);
        let ymap =
            |v: f64| y0 + 20.0 + (1.0 - v.clamp(y_min, 1.0)) / (1.0 - y_min) * (panel_h - 20.0);
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="{}" font-weight="bold">{}</text>"#,
            y0 + 12.0,
            esc(&panel.title)
        );
        for tick in 0..=4 {
            let v = y_min + (1.0 - y_min) * tick as f64 / 4.0;
            let y = ymap(v);
            let _ = writeln!(
                s,
                r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
                left + max_boxes,
                left - 4.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" transform="rotate(-90 12 {})">{}</text>"#,
            y0 + panel_h / 2.0,
            y0 + panel_h / 2.0,
            esc(metric)
        );
        let mut x = left + gap / 2.0;
        for (label, boxes) in &panel.clusters {
            let cluster_start = x;
            for (scenario, values) in boxes {
                let color = PALETTE
                    [scenarios.iter().position(|n| n == scenario).unwrap_or(0) % PALETTE.len()];
                if let Some(b) = box_stats(values) {
                    let cx = x + box_w / 2.0;
                    let _ = writeln!(
                        s,
                        r#"<line x1="{cx}" x2="{cx}" y1="{}" y2="{}" stroke="black"/><rect x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="black"/><line x1="{}" x2="{}" y1="{}" y2="{}" stroke="black" stroke-width="2"/>"#,
                        ymap(b.max),
                        ymap(b.min),
                        x + 1.0,
                        ymap(b.q3),
                        box_w - 2.0,
                        (ymap(b.q1) - ymap(b.q3)).max(0.5),
                        x + 1.0,
                        x + box_w - 1.0,
                        ymap(b.median),
                        ymap(b.median)
                    );
                }
                x += box_w;
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                (cluster_start + x) / 2.0,
                y0 + panel_h + 14.0,
                esc(label)
            );
            x += gap;
        }
    }
    s.push_str("</svg>\n");
    s
}
