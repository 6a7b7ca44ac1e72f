//! Hand-written SVG for the window-size sweep. The figure is a pure
//! function of the sweep CSV so it can be regenerated byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{validation, Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;

const SERIES: [(&str, &str, &str); 3] = [
    ("frame", "Frame", "#1f77b4"),
    ("note", "Note", "#d62728"),
    ("note_with_offset", "Note w/ offset", "#2ca02c"),
];

/// One sweep point: D and the (mean, std) F1 of each family, as fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub d: usize,
    pub f1: [(f64, f64); 3],
}

/// Read the `d`, `<family>_f1_mean`, `<family>_f1_std` columns; rows with
/// missing values (failed cells) are skipped.
pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| validation(format!("sweep table lacks column `{name}`")))
    };
    let d_col = col("d")?;
    let mut cols = Vec::new();
    for (key, _, _) in SERIES {
        cols.push((col(&format!("{key}_f1_mean"))?, col(&format!("{key}_f1_std"))?));
    }
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let Some(d) = rec.get(d_col).and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        let vals: Option<Vec<(f64, f64)>> = cols.iter().map(|&(m, s)| Some((num(m)?, num(s)?))).collect();
        if let Some(v) = vals {
            points.push(SweepPoint { d, f1: [v[0], v[1], v[2]] });
        }
    }
    points.sort_by_key(|p| p.d);
    Ok(points)
}

/// Three F1 curves against D with one-standard-deviation bands.
pub fn render_sweep_svg(points: &[SweepPoint]) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let d_max = points.iter().map(|p| p.d).max().unwrap_or(1).max(1) as f64;
    let d_min = points.iter().map(|p| p.d).min().unwrap_or(0) as f64;
    let span = (d_max - d_min).max(1.0);
    let x = |d: usize| LEFT + (d as f64 - d_min) / span * plot_w;
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0,
            v * 100.0
        );
    }
    for p in points {
        let xx = x(p.d);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h + 18.0,
            p.d
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">D</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">F1 (%)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );

    for (k, (_, label, color)) in SERIES.iter().enumerate() {
        if !points.is_empty() {
            let upper: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", x(p.d), y(p.f1[k].0 + p.f1[k].1))).collect();
            let lower: Vec<String> = points.iter().rev().map(|p| format!("{:.2},{:.2}", x(p.d), y(p.f1[k].0 - p.f1[k].1))).collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" ")
            );
            let line: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", x(p.d), y(p.f1[k].0))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            for p in points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    x(p.d),
                    y(p.f1[k].0)
                );
            }
        }
        let ly = TOP + 16.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Regenerate the plot file from a stored sweep CSV.
pub fn plot_sweep_csv(csv_path: impl AsRef<Path>, svg_path: impl AsRef<Path>) -> Result<()> {
    let (csv_path, svg_path) = (csv_path.as_ref(), svg_path.as_ref());
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let svg = render_sweep_svg(&read_sweep_csv(&text)?);
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))
}
