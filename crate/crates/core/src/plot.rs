//! Minimal dependency-free SVG charts: gap scatter plots and signed-gap
//! heatmaps with a diverging palette centered on zero.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
    /// Optional fitted line `y = slope·x + intercept`.
    pub fit: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let span = (hi - lo).max(1e-6);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Scatter plot of paired gaps with a dashed zero cross and optional fits.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = padded_range(all().map(|p| p.0).chain([0.0]));
    let (y0, y1) = padded_range(all().map(|p| p.1).chain([0.0]));
    let pw = W - MARGIN_L - MARGIN_R;
    let ph = H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    header(&mut out, W, H, title);
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3}</text>"#,
            sx(fx),
            H - MARGIN_B + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.3}</text>"#,
            MARGIN_L - 6.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r##"<line x1="{:.1}" y1="{MARGIN_T}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        sx(0.0),
        sx(0.0),
        MARGIN_T + ph
    );
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN_L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        sy(0.0),
        MARGIN_L + pw,
        sy(0.0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for &(x, y) in s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
                sx(x),
                sy(y)
            );
        }
        if let Some((m, b)) = s.fit {
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                sx(x0),
                sy((m * x0 + b).clamp(y0, y1)),
                sx(x1),
                sy((m * x1 + b).clamp(y0, y1))
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            MARGIN_L + 8.0,
            MARGIN_T + 16.0 + 14.0 * k as f64,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Diverging color for `v` in `[-limit, limit]`: blue below zero, red above.
fn diverging(v: f64, limit: f64) -> String {
    let t = if limit > 0.0 {
        (v / limit).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

/// One named matrix of a heatmap figure.
pub struct Panel<'a> {
    pub name: &'a str,
    pub matrix: &'a [Vec<f64>],
}

/// Side-by-side heatmaps of square matrices of signed gaps sharing one color
/// scale symmetric about zero. `matrix[i][j]` is drawn at row `i`, column
/// `j`, both labelled from 1.
pub fn heatmap_svg(title: &str, row_label: &str, col_label: &str, panels: &[Panel<'_>]) -> String {
    let n = panels
        .iter()
        .map(|p| p.matrix.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let cell = 22.0;
    let side = cell * n as f64;
    let left = 56.0;
    let top = 60.0;
    let gap = 48.0;
    let panels_w = panels.len().max(1) as f64 * (side + gap) - gap;
    let width = left + panels_w + 100.0;
    let height = top + side + 48.0;
    let limit = panels
        .iter()
        .flat_map(|p| p.matrix.iter().flatten())
        .fold(0.0f64, |a, v| a.max(v.abs()));

    let mut out = String::new();
    header(&mut out, width, height, title);
    for (k, panel) in panels.iter().enumerate() {
        let x0 = left + k as f64 * (side + gap);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
            x0 + side / 2.0,
            top - 10.0,
            escape(panel.name)
        );
        for (i, row) in panel.matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="{}"><title>{} ({}, {}): {v:.4}</title></rect>"#,
                    x0 + cell * j as f64,
                    top + cell * i as f64,
                    diverging(v, limit),
                    escape(panel.name),
                    i + 1,
                    j + 1
                );
            }
        }
        for i in 0..n {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
                x0 - 4.0,
                top + cell * i as f64 + cell / 2.0 + 3.5,
                i + 1
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
                x0 + cell * i as f64 + cell / 2.0,
                top + side + 13.0,
                i + 1
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + side / 2.0,
            height - 10.0,
            escape(col_label)
        );
    }
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + side / 2.0,
        escape(row_label)
    );
    // color bar
    let bar_x = left + panels_w + 24.0;
    let steps = 20;
    for s in 0..steps {
        let v = limit * (1.0 - 2.0 * (s as f64 + 0.5) / steps as f64);
        let _ = writeln!(
            out,
            r#"<rect x="{bar_x:.1}" y="{:.1}" width="14" height="{:.2}" fill="{}"/>"#,
            top + side * s as f64 / steps as f64,
            side / steps as f64 + 0.5,
            diverging(v, limit)
        );
    }
    for (label, y) in [
        (limit, top + 4.0),
        (0.0, top + side / 2.0 + 4.0),
        (-limit, top + side),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{y:.1}">{label:+.3}</text>"#,
            bar_x + 18.0
        );
    }
    out.push_str("</svg>\n");
    out
}
