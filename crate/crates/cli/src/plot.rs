//! Static SVG rendering of the engine's CSV outputs.

use std::fmt::Write;
use std::path::Path;

use anyhow::{bail, Result};
use stagemoe::metrics::ErrorMap;
use stagemoe::table::Table;

use crate::PlotKind;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub fn render(input: &Path, kind: PlotKind, title: &str) -> Result<String> {
    let table = Table::read(input)?;
    let is_error_map = table.header.first().is_some_and(|h| h == "bin_lo");
    match (kind, is_error_map) {
        (PlotKind::Heat, false) => bail!("heat plots need an error-map table (bin_lo, bin_hi, region, mse, count)"),
        (PlotKind::Lines, true) => bail!("error-map tables render only as heat plots"),
        (PlotKind::Heat, true) | (PlotKind::Auto, true) => {
            let (map, names) = ErrorMap::read_csv(input)?;
            Ok(heat(&map, &names, title))
        }
        _ => lines(&table, title),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
}

/// Every non-time column as a polyline against the first column.
fn lines(table: &Table, title: &str) -> Result<String> {
    let rows = table.numeric_rows()?;
    if rows.is_empty() || table.header.len() < 2 {
        bail!("nothing to plot: need a time column, one series and one row");
    }
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let (x_lo, x_hi) = padded_range(xs.iter().copied());
    let (y_lo, y_hi) = padded_range(rows.iter().flat_map(|r| r[1..].iter().copied()));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    header(&mut svg, title);
    axes(&mut svg, (x_lo, x_hi), (y_lo, y_hi), &table.header[0]);
    for (j, name) in table.header.iter().enumerate().skip(1) {
        let color = PALETTE[(j - 1) % PALETTE.len()];
        let points: Vec<String> = rows.iter().map(|r| format!("{:.3},{:.3}", px(r[0]), py(r[j]))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(name),
            points.join(" ")
        );
        let ly = TOP + 16.0 * (j - 1) as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn axes(svg: &mut String, x: (f64, f64), y: (f64, f64), x_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for (v, px) in [(x.0, x0), (x.1, x1)] {
        let _ = writeln!(svg, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, tick(v));
    }
    for (v, py) in [(y.0, y0), (y.1, y1)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(v));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y0 + 30.0,
        escape(x_label)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-2 {
        return format!("{v:.2e}");
    }
    format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Bins along x, regions along y; darker cells have larger error, grey cells
/// have no observations.
fn heat(map: &ErrorMap, names: &[String], title: &str) -> String {
    let max = map.mse.iter().flatten().flatten().copied().fold(0.0, f64::max);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let cw = plot_w / map.bins.len().max(1) as f64;
    let ch = plot_h / names.len().max(1) as f64;

    let mut svg = String::new();
    header(&mut svg, title);
    for (b, mse) in map.mse.iter().enumerate() {
        for (u, name) in names.iter().enumerate() {
            let (fill, value) = match mse {
                Some(v) => {
                    let s = if max > 0.0 { v[u] / max } else { 0.0 };
                    let g = (255.0 * (1.0 - s)).round() as u8;
                    (format!("rgb(255,{g},{g})"), v[u].to_string())
                }
                None => ("#cccccc".to_string(), String::new()),
            };
            let _ = writeln!(
                svg,
                r#"<rect data-bin="{b}" data-region="{}" data-mse="{value}" x="{:.3}" y="{:.3}" width="{cw:.3}" height="{ch:.3}" fill="{fill}" stroke="white"/>"#,
                escape(name),
                LEFT + b as f64 * cw,
                TOP + u as f64 * ch
            );
        }
    }
    for (u, name) in names.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.3}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            TOP + (u as f64 + 0.5) * ch + 4.0,
            escape(name)
        );
    }
    for (b, (lo, hi)) in map.bins.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{}" text-anchor="middle">{}–{}</text>"#,
            LEFT + (b as f64 + 0.5) * cw,
            HEIGHT - BOTTOM + 16.0,
            tick(*lo),
            tick(*hi)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}">max mse {}</text>"#,
        WIDTH - RIGHT + 12.0,
        TOP + 12.0,
        tick(max)
    );
    svg.push_str("</svg>\n");
    svg
}
