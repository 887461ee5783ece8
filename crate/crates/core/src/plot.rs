//! Static SVG line charts from sweep CSV files.

use std::fmt::Write as _;

use crate::config::PlotSection;
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Parse("csv has no header".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv row: {e}")))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(Error::Parse("csv has no data rows".into()));
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("csv has no column {name:?}")))
    }

    fn numeric(&self, c: usize) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r[c].trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
    }
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the chart; identical inputs give identical bytes.
pub fn render_svg(table: &Table, spec: Option<&PlotSection>) -> Result<String> {
    let x_col = match spec.and_then(|s| s.x.as_deref()) {
        Some(name) => table.column(name)?,
        None => 0,
    };
    let xs = table
        .numeric(x_col)
        .ok_or_else(|| Error::Parse(format!("x column {:?} is not numeric", table.header[x_col])))?;
    let series_cols: Vec<usize> = match spec.and_then(|s| s.y.as_ref()) {
        Some(names) => names.iter().map(|n| table.column(n)).collect::<Result<_>>()?,
        None => (0..table.header.len()).filter(|&c| c != x_col && table.numeric(c).is_some()).collect(),
    };
    let mut series = Vec::new();
    for c in series_cols {
        let ys = table
            .numeric(c)
            .ok_or_else(|| Error::Parse(format!("column {:?} is not numeric", table.header[c])))?;
        series.push((table.header[c].clone(), ys));
    }
    if series.is_empty() {
        return Err(Error::Parse("csv has no numeric series to plot".into()));
    }
    let all_positive = series.iter().flat_map(|s| s.1.iter()).all(|&v| v > 0.0);
    let log_y = spec.and_then(|s| s.log_y).unwrap_or(all_positive);
    if log_y && !all_positive {
        return Err(Error::Parse("log scale needs strictly positive values".into()));
    }
    let ty = |v: f64| if log_y { v.log10() } else { v };

    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = series
        .iter()
        .flat_map(|s| s.1.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(ty(v)), b.max(ty(v))));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    if log_y {
        y0 = y0.floor();
        y1 = y1.ceil();
    }
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| TOP + ph - (ty(v) - y0) / (y1 - y0) * ph;
    let pyt = |t: f64| TOP + ph - (t - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(title) = spec.and_then(|s| s.title.as_deref()) {
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, num(LEFT + pw / 2.0), escape(title));
    }
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        num(LEFT),
        num(TOP),
        num(pw),
        num(ph)
    );
    for i in 0..=5 {
        let v = x0 + (x1 - x0) * i as f64 / 5.0;
        let x = px(v);
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, num(x), num(TOP + ph), num(TOP + ph + 5.0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, num(x), num(TOP + ph + 20.0), tick_label(v));
    }
    let y_ticks: Vec<f64> = if log_y {
        (y0 as i64..=y1 as i64).map(|e| e as f64).collect()
    } else {
        (0..=5).map(|i| y0 + (y1 - y0) * i as f64 / 5.0).collect()
    };
    for t in y_ticks {
        let y = pyt(t);
        let label = if log_y { format!("1e{}", t as i64) } else { tick_label(t) };
        let _ = writeln!(s, r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#dddddd"/>"##, num(LEFT), num(y), num(LEFT + pw));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, num(LEFT - 8.0), num(y + 4.0), label);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num(LEFT + pw / 2.0),
        num(HEIGHT - 16.0),
        escape(&table.header[x_col])
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(&x, &y)| (px(x), py(y))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", num(*x), num(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for (x, y) in &pts {
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, num(*x), num(*y));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 16.0;
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/>"#, num(lx), num(ly), num(lx + 20.0));
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, num(lx + 26.0), num(ly + 4.0), escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
