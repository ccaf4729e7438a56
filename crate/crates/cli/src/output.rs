//! File formats: count and scan CSVs, JSON reports and the SVG fringe plot.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nbell_core::counting::CountRecord;
use nbell_core::FitResult;
use serde::{Deserialize, Serialize};

pub const COUNT_HEADER: [&str; 4] = ["alpha_rad", "gamma_rad", "repetition", "counts"];
pub const SCAN_HEADER: [&str; 4] = [
    "position_mm",
    "gamma_rad",
    "expected_counts",
    "sampled_counts",
];

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_counts(path: &Path, records: &[CountRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(COUNT_HEADER)?;
    for r in records {
        w.write_record([
            num(r.alpha),
            num(r.gamma),
            r.repetition.to_string(),
            num(r.counts),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CountRow {
    alpha_rad: f64,
    gamma_rad: f64,
    #[serde(default)]
    repetition: Option<usize>,
    counts: f64,
}

pub fn read_counts(path: &Path) -> Result<Vec<CountRecord>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    for required in ["alpha_rad", "gamma_rad", "counts"] {
        if !headers.iter().any(|h| h == required) {
            bail!(
                "{}: missing column `{required}` (expected {})",
                path.display(),
                COUNT_HEADER.join(",")
            );
        }
    }
    let mut records = Vec::new();
    for (line, row) in r.deserialize::<CountRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        if !(row.counts >= 0.0 && row.counts.is_finite()) {
            bail!(
                "{}: row {}: counts must be finite and nonnegative",
                path.display(),
                line + 2
            );
        }
        records.push(CountRecord {
            alpha: row.alpha_rad,
            gamma: row.gamma_rad,
            repetition: row.repetition.unwrap_or(0),
            counts: row.counts,
        });
    }
    Ok(records)
}

pub struct ScanRow {
    pub position_mm: f64,
    pub gamma_rad: f64,
    pub expected_counts: f64,
    pub sampled_counts: f64,
}

pub fn write_scan(path: &Path, rows: &[ScanRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SCAN_HEADER)?;
    for r in rows {
        w.write_record([
            num(r.position_mm),
            num(r.gamma_rad),
            num(r.expected_counts),
            num(r.sampled_counts),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct Marker {
    pub position: f64,
    pub label: String,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

/// Counts against stage position with the fitted curve and dashed γ markers.
pub fn scan_svg(
    positions: &[f64],
    counts: &[f64],
    fit: &FitResult,
    markers: &[Marker],
    title: &str,
) -> String {
    let (x0, x1) = (positions[0], positions[positions.len() - 1]);
    let y1 = counts
        .iter()
        .copied()
        .chain([fit.offset + fit.amplitude])
        .fold(0.0f64, f64::max)
        * 1.08;
    let y1 = if y1 > 0.0 { y1 } else { 1.0 };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - y / y1) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<!-- nbell {} -->", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // axes and ticks
    let (left, right, top, bottom) = (
        MARGIN_LEFT,
        WIDTH - MARGIN_RIGHT,
        MARGIN_TOP,
        HEIGHT - MARGIN_BOTTOM,
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left:.1},{top:.1} L{left:.1},{bottom:.1} L{right:.1},{bottom:.1}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let x = x0 + (x1 - x0) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{bottom:.1}" x2="{0:.1}" y2="{1:.1}" stroke="black"/><text x="{0:.1}" y="{2:.1}" text-anchor="middle">{x:.1}</text>"#,
            px(x),
            bottom + 5.0,
            bottom + 20.0
        );
        let y = y1 * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{left:.1}" y2="{1:.1}" stroke="black"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{y:.0}</text>"#,
            left - 5.0,
            py(y),
            left - 8.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">stage displacement (mm)</text>"#,
        left + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0:.1}" text-anchor="middle" transform="rotate(-90 18 {0:.1})">counts</text>"#,
        top + plot_h / 2.0
    );

    for m in markers
        .iter()
        .filter(|m| m.position >= x0 && m.position <= x1)
    {
        let x = px(m.position);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{top:.1}" x2="{x:.1}" y2="{bottom:.1}" stroke="gray" stroke-dasharray="6,4"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" fill="gray">{}</text>"#,
            top + 14.0,
            escape(&m.label)
        );
    }

    let samples = 400;
    let mut curve = String::new();
    for k in 0..=samples {
        let x = x0 + (x1 - x0) * k as f64 / samples as f64;
        let _ = write!(
            curve,
            "{}{:.2},{:.2}",
            if k == 0 { "" } else { " " },
            px(x),
            py(fit.evaluate(x))
        );
    }
    let _ = writeln!(
        s,
        r#"<polyline points="{curve}" fill="none" stroke="firebrick" stroke-width="1.5"/>"#
    );
    for (&x, &y) in positions.iter().zip(counts) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            px(x),
            py(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">C = {:.4} ± {:.4}, P = {:.3} mm</text>"#,
        right - 5.0,
        top + 30.0,
        fit.contrast,
        fit.contrast_sigma,
        fit.period
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
