//! Rejection tables as CSV and as a static SVG line chart.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::harness::{Method, RejectionTable};

pub const CSV_HEADER: [&str; 6] = [
    "method",
    "sweep_param",
    "sweep_value",
    "reject_rate",
    "reps",
    "seed",
];

pub fn write_csv<W: Write>(table: &RejectionTable, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.method.name().to_string(),
            r.sweep_param.name().to_string(),
            r.sweep_value.to_string(),
            r.reject_rate.to_string(),
            r.reps.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()
}

pub fn emit_csv(table: &RejectionTable, path: &Path) -> io::Result<()> {
    write_csv(table, BufWriter::new(File::create(path)?))
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;

const STYLES: [(&str, &str); 8] = [
    ("#000000", ""),
    ("#555555", "2,2"),
    ("#999999", ""),
    ("#000000", "10,5"),
    ("#999999", "10,5"),
    ("#1f4e9c", ""),
    ("#b03030", ""),
    ("#2e7d32", "4,3"),
];

/// Renders one polyline per method over the sweep values, with a dashed
/// horizontal line at `alpha`.
pub fn render_svg(table: &RejectionTable, alpha: f64) -> String {
    let mut methods: Vec<Method> = vec![];
    for r in &table.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let param = table.rows.first().map_or("value", |r| r.sweep_param.name());
    let xs: Vec<f64> = table.rows.iter().map(|r| r.sweep_value).collect();
    let (x_min, x_max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (x_min, x_max) = if xs.is_empty() {
        (0.0, 1.0)
    } else if x_min == x_max {
        (x_min - 0.5, x_max + 0.5)
    } else {
        (x_min, x_max)
    };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - y) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for tick in 0..=5 {
        let y = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.1}</text>"#,
            MARGIN_LEFT - 6.0,
            py(y) + 4.0
        );
    }
    for (x, label) in [(x_min, x_min), (x_max, x_max)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            px(x),
            HEIGHT - MARGIN_BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{param}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="black" stroke-dasharray="3,3"/>"#,
        MARGIN_LEFT + plot_w,
        y = py(alpha)
    );
    for (i, &method) in methods.iter().enumerate() {
        let (color, dash) = STYLES[i % STYLES.len()];
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let points: Vec<String> = table
            .series(method)
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="1.5"{dash_attr}/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            method.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(table: &RejectionTable, alpha: f64, path: &Path) -> io::Result<()> {
    std::fs::write(path, render_svg(table, alpha))
}
