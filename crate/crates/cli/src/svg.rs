//! Minimal SVG writers: heatmaps and line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliResult;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

fn color(x: f64) -> String {
    // blue (0) to white (0.5) to red (1)
    let x = x.clamp(0.0, 1.0);
    let (r, g, b) = if x < 0.5 {
        let s = x / 0.5;
        (s, s, 1.0)
    } else {
        let s = (1.0 - x) / 0.5;
        (1.0, s, s)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8
    )
}

/// Heatmap of a row-major nq×np field, downsampled to at most `max_cells` per side.
/// The colour scale is symmetric about zero.
pub fn heatmap(path: &Path, title: &str, values: &[f64], nq: usize, np: usize, max_cells: usize) -> CliResult<()> {
    let stride = nq.max(np).div_ceil(max_cells.max(1)).max(1);
    let (cq, cp) = (nq.div_ceil(stride), np.div_ceil(stride));
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let (w, h) = (SIZE / cq as f64, SIZE / cp as f64);
    let mut s = String::new();
    let total = SIZE + 2.0 * MARGIN;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="14">{title}</text>"#, MARGIN - 12.0);
    for a in 0..cq {
        for b in 0..cp {
            let (j, k) = (a * stride, b * stride);
            let v = values[j * np + k] / scale;
            // q to the right, p upward
            let x = MARGIN + a as f64 * w;
            let y = MARGIN + (cp - 1 - b) as f64 * h;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                w + 0.05,
                h + 0.05,
                color(0.5 + 0.5 * v)
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">q →   p ↑   max |value| = {scale:.6e}</text>"#, total - 12.0);
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

/// Line plot of y against x with fixed or automatic axis ranges.
pub fn line_plot(
    path: &Path,
    title: &str,
    xs: &[f64],
    ys: &[f64],
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
) -> CliResult<()> {
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        }
    };
    let (x0, x1) = x_range.unwrap_or_else(|| range(xs));
    let (y0, y1) = y_range.unwrap_or_else(|| range(ys));
    let total = SIZE + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * SIZE;
    let py = |y: f64| MARGIN + (1.0 - (y - y0) / (y1 - y0)) * SIZE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="14">{title}</text>"#, MARGIN - 12.0);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-size="12">x: [{x0:.4e}, {x1:.4e}]  y: [{y0:.4e}, {y1:.4e}]</text>"#,
        total - 12.0
    );
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
