//! Deterministic SVG plots of CSV tables.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("table has no data rows")]
    Empty,
    #[error("band plot needs `mean` and `stdev` columns")]
    MissingColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Line,
    Band,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn parse_table(text: &str) -> Result<Table, PlotError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| PlotError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| PlotError::Parse {
            line,
            message: e.to_string(),
        })?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| PlotError::Parse {
                    line,
                    message: format!("'{f}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() || headers.len() < 2 {
        return Err(PlotError::Empty);
    }
    Ok(Table { headers, rows })
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: &[f64], ys: impl Iterator<Item = f64>) -> Self {
        let span = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let (xl, xh) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let (yl, yh) = ys
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let (yl, yh) = if yl.is_finite() { (yl, yh) } else { (0.0, 0.0) };
        Self {
            x: span(xl, xh),
            y: span(yl, yh),
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let u = MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN);
        let v = HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN);
        (u, v)
    }

    fn points(&self, xs: &[f64], ys: &[f64]) -> String {
        let mut s = String::new();
        for (&x, &y) in xs.iter().zip(ys) {
            if y.is_finite() {
                let (u, v) = self.px(x, y);
                write!(s, "{u:.2},{v:.2} ").unwrap();
            }
        }
        s.trim_end().to_string()
    }
}

fn axes(out: &mut String, f: &Frame, xlabel: &str) {
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    writeln!(
        out,
        r##"<path d="M{x0} {MARGIN} V{y0} H{}" fill="none" stroke="#000"/>"##,
        WIDTH - MARGIN
    )
    .unwrap();
    writeln!(out, r#"<text x="{x0}" y="{}" font-size="11">{:.4}</text>"#, y0 + 15.0, f.x.0).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.4}</text>"#, WIDTH - MARGIN, y0 + 15.0, f.x.1).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(xlabel)).unwrap();
    writeln!(out, r#"<text x="4" y="{}" font-size="11">{:.4}</text>"#, y0, f.y.0).unwrap();
    writeln!(out, r#"<text x="4" y="{}" font-size="11">{:.4}</text>"#, MARGIN, f.y.1).unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of every column against the first, or a `mean ± 2·stdev` band.
pub fn emit_plot(table_text: &str, kind: PlotKind) -> Result<String, PlotError> {
    let t = parse_table(table_text)?;
    let xs: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    out.push('\n');
    match kind {
        PlotKind::Line => {
            let f = Frame::new(&xs, t.rows.iter().flat_map(|r| r[1..].to_vec()));
            axes(&mut out, &f, &t.headers[0]);
            for (k, name) in t.headers.iter().enumerate().skip(1) {
                let ys: Vec<f64> = t.rows.iter().map(|r| r[k]).collect();
                let c = COLORS[(k - 1) % COLORS.len()];
                writeln!(out, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, f.points(&xs, &ys)).unwrap();
                writeln!(out, r#"<text x="{}" y="{}" font-size="11" fill="{c}">{}</text>"#, WIDTH - MARGIN + 4.0, MARGIN + 14.0 * k as f64, escape(name)).unwrap();
            }
        }
        PlotKind::Band => {
            let (mean, sd) = match (t.column("mean"), t.column("stdev")) {
                (Some(m), Some(s)) => (m, s),
                _ => return Err(PlotError::MissingColumns),
            };
            let hi: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m + 2.0 * s).collect();
            let lo: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m - 2.0 * s).collect();
            let f = Frame::new(&xs, hi.iter().chain(&lo).copied());
            axes(&mut out, &f, &t.headers[0]);
            let xr: Vec<f64> = xs.iter().rev().copied().collect();
            let lr: Vec<f64> = lo.iter().rev().copied().collect();
            writeln!(
                out,
                r##"<polygon fill="#1f77b4" fill-opacity="0.25" stroke="none" points="{} {}"/>"##,
                f.points(&xs, &hi),
                f.points(&xr, &lr)
            )
            .unwrap();
            writeln!(out, r##"<polyline fill="none" stroke="#1f77b4" points="{}"/>"##, f.points(&xs, &mean)).unwrap();
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_rejects_text() {
        assert!(matches!(parse_table("a,b\n1,x\n"), Err(PlotError::Parse { line: 2, .. })));
    }
}
