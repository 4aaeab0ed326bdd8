//! CSV tables and standalone SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulation::{ExperimentTable, TableRow};

pub const TABLE_HEADER: [&str; 5] = ["estimator", "N", "mean_sq_frobenius", "std_error", "replications"];

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// CSV text with the given header and one record per row, LF line endings.
pub fn render_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses CSV text produced by [`render_csv`], checking the header.
pub fn parse_csv<T: DeserializeOwned>(header: &[&str], text: &str) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Parse {
            line: 1,
            column: 0,
            message: format!("unexpected header {found:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// Rows ordered by `(estimator, N)`.
pub fn sorted_rows(table: &ExperimentTable) -> Vec<TableRow> {
    let mut rows = table.rows.clone();
    rows.sort_by(|a, b| a.estimator.cmp(&b.estimator).then(a.n.cmp(&b.n)));
    rows
}

pub fn table_csv(table: &ExperimentTable) -> Result<String> {
    render_csv(&TABLE_HEADER, &sorted_rows(table))
}

/// Writes `estimator,N,mean_sq_frobenius,std_error,replications`.
pub fn emit_csv(table: &ExperimentTable, path: &Path) -> Result<()> {
    std::fs::write(path, table_csv(table)?)?;
    Ok(())
}

/// Reads a table written by [`emit_csv`]; failure records are not stored
/// in the file and come back empty.
pub fn read_csv(path: &Path) -> Result<ExperimentTable> {
    let rows = parse_csv(&TABLE_HEADER, &std::fs::read_to_string(path)?)?;
    Ok(ExperimentTable {
        rows,
        failures: Vec::new(),
    })
}

/// One named curve of `(N, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Curves of a table, one per estimator, in sorted order.
pub fn table_series(table: &ExperimentTable) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in sorted_rows(table) {
        let point = (r.n as f64, r.mean_sq_frobenius);
        match out.last_mut() {
            Some(s) if s.name == r.estimator => s.points.push(point),
            _ => out.push(Series {
                name: r.estimator,
                points: vec![point],
            }),
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG 1.1 document with a linear `N` axis and a log-scale value axis.
/// Non-positive values cannot be placed on the log axis and are skipped.
pub fn render_svg(series: &[Series], y_label: &str) -> Result<String> {
    let visible: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s.points.iter().copied().filter(|&(_, y)| y > 0.0 && y.is_finite()).collect();
            (s.name.as_str(), pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = visible.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (mut x_lo, mut x_hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if x_lo == x_hi {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    let (y_min, y_max) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1.log10()), b.max(p.1.log10())));
    let (dec_lo, mut dec_hi) = (y_min.floor() as i32, y_max.ceil() as i32);
    if dec_hi == dec_lo {
        dec_hi += 1;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + (dec_hi as f64 - y.log10()) / (dec_hi - dec_lo) as f64 * plot_h;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT:.2}\" y=\"{TOP:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    for d in dec_lo..=dec_hi {
        let y = TOP + (dec_hi - d) as f64 / (dec_hi - dec_lo) as f64 * plot_h;
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            LEFT,
            LEFT + plot_w
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{d}</text>", LEFT - 6.0, y + 4.0);
    }
    let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for &x in &xs {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{x}</text>",
            px(x),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">N</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (name, pts)) in visible.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"><title>{}</title></polyline>",
            coords.join(" "),
            escape(name)
        );
        for &(x, y) in pts {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", px(x), py(y));
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            lx + 24.0
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", lx + 30.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Error-versus-`N` plot of a table, one polyline per estimator.
pub fn emit_svg_plot(table: &ExperimentTable, path: &Path) -> Result<()> {
    let svg = render_svg(&table_series(table), "mean squared Frobenius error")?;
    std::fs::write(path, svg)?;
    Ok(())
}
