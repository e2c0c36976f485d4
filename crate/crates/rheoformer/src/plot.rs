//! Minimal plot emission: SVG line plots and heatmaps, each with a CSV
//! sidecar holding the exact plotted numbers (shortest round-trip float
//! formatting, so parsing the sidecar recovers the values bit for bit).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, RheoError};
use crate::tensor::Matrix;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One named curve of a line plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub y: Vec<f64>,
}

fn atomic_write_text(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_csv(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut text = columns.join(",");
    text.push('\n');
    for row in rows {
        if row.len() != columns.len() {
            return Err(RheoError::Config(format!(
                "csv row has {} values for {} columns",
                row.len(),
                columns.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    atomic_write_text(path, &text)
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_values(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of one or more series against a shared x grid. Writes
/// `path` (SVG) and a sidecar CSV next to it (same stem, `.csv`).
pub fn line_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    x: &[f64],
    series: &[Series],
) -> Result<()> {
    if series.is_empty() || series.iter().any(|s| s.y.len() != x.len()) {
        return Err(RheoError::Config("line_plot: series lengths must match the x grid".into()));
    }
    let (x_lo, x_hi) = finite_range(x.iter().copied());
    let (y_lo, y_hi) = finite_range(series.iter().flat_map(|s| s.y.iter().copied()));
    let px = |v: f64| MARGIN + (v - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        svg_escape(title)
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    for v in tick_values(x_lo, x_hi) {
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>\n",
            px(v),
            HEIGHT - MARGIN + 20.0
        );
    }
    for v in tick_values(y_lo, y_hi) {
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>\n",
            MARGIN - 8.0,
            py(v) + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 14.0,
        svg_escape(x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        svg_escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(&s.y)
            .filter(|(xv, yv)| xv.is_finite() && yv.is_finite())
            .map(|(&xv, &yv)| format!("{:.2},{:.2}", px(xv), py(yv)))
            .collect();
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        );
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN - 150.0,
            MARGIN + 18.0 * (i as f64 + 1.0),
            svg_escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    atomic_write_text(path, &svg)?;

    let mut columns = vec![x_label.to_string()];
    columns.extend(series.iter().map(|s| s.label.clone()));
    let rows: Vec<Vec<f64>> = (0..x.len())
        .map(|i| {
            let mut row = vec![x[i]];
            row.extend(series.iter().map(|s| s.y[i]));
            row
        })
        .collect();
    write_csv(&path.with_extension("csv"), &columns, &rows)
}

/// Diverging blue-white-red color for `t` in [0,1].
fn diverging_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (
            (33.0 + u * (247.0 - 33.0)) as u8,
            (102.0 + u * (247.0 - 102.0)) as u8,
            (172.0 + u * (247.0 - 172.0)) as u8,
        )
    } else {
        let u = (t - 0.5) / 0.5;
        (
            (247.0 + u * (178.0 - 247.0)) as u8,
            (247.0 + u * (24.0 - 247.0)) as u8,
            (247.0 + u * (43.0 - 247.0)) as u8,
        )
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap of a matrix (rows on the vertical axis, columns on the
/// horizontal). Writes the SVG plus a CSV sidecar holding the raw values,
/// one matrix row per line.
pub fn heatmap(path: &Path, title: &str, x_label: &str, y_label: &str, values: &Matrix) -> Result<()> {
    if values.rows == 0 || values.cols == 0 {
        return Err(RheoError::Config("heatmap: empty matrix".into()));
    }
    let (lo, hi) = finite_range(values.data.iter().copied());
    let cell_w = (WIDTH - 2.0 * MARGIN) / values.cols as f64;
    let cell_h = (HEIGHT - 2.0 * MARGIN) / values.rows as f64;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        svg_escape(title)
    );
    for r in 0..values.rows {
        for c in 0..values.cols {
            let v = values.get(r, c);
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let _ = write!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                MARGIN + c as f64 * cell_w,
                MARGIN + r as f64 * cell_h,
                cell_w + 0.5,
                cell_h + 0.5,
                diverging_color(t)
            );
        }
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n\
         <text x=\"{}\" y=\"{}\">range [{lo:.4}, {hi:.4}]</text>\n</svg>\n",
        WIDTH / 2.0,
        HEIGHT - 14.0,
        svg_escape(x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        svg_escape(y_label),
        MARGIN,
        HEIGHT - 34.0
    );
    atomic_write_text(path, &svg)?;

    let columns: Vec<String> = (0..values.cols).map(|c| format!("c{c}")).collect();
    let rows: Vec<Vec<f64>> = (0..values.rows).map(|r| values.row(r).to_vec()).collect();
    write_csv(&path.with_extension("csv"), &columns, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_writes_svg_and_exact_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.svg");
        let x = vec![0.0, 0.1, 0.2, 0.3];
        let series = vec![
            Series { label: "truth".into(), y: vec![1.0, -0.25, 0.125, 2.0 / 3.0] },
            Series { label: "pred".into(), y: vec![0.9, -0.3, 0.1, 0.7] },
        ];
        line_plot(&path, "stress", "t (s)", "sigma (Pa)", &x, &series).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);

        let csv = std::fs::read_to_string(path.with_extension("csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t (s),truth,pred");
        let row1: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(row1, vec![0.0, 1.0, 0.9]);
        // exact round trip of a non-representable decimal
        let row4: Vec<f64> = csv
            .lines()
            .nth(4)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(row4[1].to_bits(), (2.0f64 / 3.0).to_bits());
    }

    #[test]
    fn line_plot_rejects_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.svg");
        let err = line_plot(
            &path,
            "t",
            "x",
            "y",
            &[0.0, 1.0],
            &[Series { label: "s".into(), y: vec![1.0] }],
        );
        assert!(err.is_err());
        assert!(!path.exists());
    }

    #[test]
    fn heatmap_writes_cells_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.svg");
        let m = Matrix::new(3, 4, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect());
        heatmap(&path, "u_x", "y", "t", &m).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("<rect").count(), 12 + 1); // cells + background
        let csv = std::fs::read_to_string(path.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last, vec![2.0, 2.5, 3.0, 3.5]);
    }

    #[test]
    fn diverging_color_endpoints() {
        assert_eq!(diverging_color(0.0), "#2166ac");
        assert_eq!(diverging_color(1.0), "#b2182b");
        assert_eq!(diverging_color(0.5), "#f7f7f7");
    }
}
