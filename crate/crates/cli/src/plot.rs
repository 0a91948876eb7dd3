//! Line charts of metrics columns against `env_step`, written as standalone
//! SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// What to draw and where.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartSpec {
    pub runs: Vec<PathBuf>,
    pub columns: Vec<String>,
    pub out: PathBuf,
    pub title: String,
}

/// Reads `(env_step, column)` pairs, skipping rows where the column is empty.
pub fn read_series(csv_path: &Path, column: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| CliError::from_csv(csv_path, e))?;
    let headers = reader.headers().map_err(|e| CliError::from_csv(csv_path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("{}: no column {name:?}", csv_path.display())))
    };
    let (x_col, y_col) = (find("env_step")?, find(column)?);
    let mut points = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::from_csv(csv_path, e))?;
        rows += 1;
        let y = record.get(y_col).unwrap_or("");
        if y.is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::Validation(format!("{}: row {rows}: {s:?} is not a number", csv_path.display())))
        };
        let (x, y) = (parse(record.get(x_col).unwrap_or(""))?, parse(y)?);
        if x.is_finite() && y.is_finite() {
            points.push((x, y));
        }
    }
    if rows == 0 {
        return Err(CliError::Validation(format!("{}: metrics file has no rows", csv_path.display())));
    }
    Ok(points)
}

/// `corrected` when the run directory is named after its variant, otherwise
/// `dirname (variant)`.
pub fn run_label(run: &Path) -> String {
    let name = run
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string());
    let variant = std::fs::read_to_string(run.join("config.json"))
        .ok()
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| v["agent"]["variant"].as_str().map(str::to_string));
    match variant {
        Some(v) if v == name => v,
        Some(v) => format!("{name} ({v})"),
        None => name,
    }
}

/// Loads every requested series and writes the chart.
pub fn plot_metrics(spec: &ChartSpec) -> Result<(), CliError> {
    let mut series = Vec::new();
    for run in &spec.runs {
        let label = run_label(run);
        for column in &spec.columns {
            let points = read_series(&run.join("metrics.csv"), column)?;
            let label = if spec.columns.len() > 1 { format!("{label} {column}") } else { label.clone() };
            series.push(Series { label, points });
        }
    }
    let y_label = spec.columns.join(", ");
    let svg = render_svg(&spec.title, "env_step", &y_label, &series);
    std::fs::write(&spec.out, svg).map_err(|e| CliError::io(&spec.out, e))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Evenly spaced round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { 0.1 * lo.abs() } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn format_tick(v: f64) -> String {
    let v = if v.abs() < 1e-12 { 0.0 } else { v };
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Line chart with linear axes and a legend. Output depends only on the
/// arguments.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = padded_range(all().map(|p| p.0));
    let (y_lo, y_hi) = padded_range(all().map(|p| p.1));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + plot_w / 2.0, escape(title));

    for x in ticks(x_lo, x_hi) {
        let px = sx(x);
        let _ = writeln!(out, r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, TOP + plot_h);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + plot_h + 18.0, format_tick(x));
    }
    for y in ticks(y_lo, y_hi) {
        let py = sy(y);
        let _ = writeln!(out, r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##, LEFT + plot_w);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, format_tick(y));
    }
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + plot_w / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if coords.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        } else if !coords.is_empty() {
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/>"#, lx + 20.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside_the_range() {
        assert_eq!(ticks(0.0, 100_000.0), vec![0.0, 20_000.0, 40_000.0, 60_000.0, 80_000.0, 100_000.0]);
        let t = ticks(-0.13, 0.87);
        assert_eq!(t.first(), Some(&-0.0));
        assert!(t.iter().all(|&v| (-0.13..=0.87).contains(&v)));
    }

    #[test]
    fn degenerate_ranges_are_widened() {
        assert_eq!(padded_range([2.0].into_iter()), (1.8, 2.2));
        assert_eq!(padded_range([0.0, 0.0].into_iter()), (-1.0, 1.0));
        assert_eq!(padded_range(std::iter::empty()), (0.0, 1.0));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_svg("a<b", "x", "y & z", &[Series { label: "\"q\"".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] }]);
        assert!(svg.contains("a&lt;b") && svg.contains("y &amp; z") && svg.contains("&quot;q&quot;"));
        assert!(!svg.contains("a<b"));
    }

    #[test]
    fn tick_labels_are_compact() {
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(40_000.0), "4.0e4");
        assert_eq!(format_tick(-1e-15), "0");
        assert_eq!(format_tick(-3.0), "-3");
    }
}
