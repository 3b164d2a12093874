use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::log::{TrajectoryLog, CSV_COLUMNS};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Shortest decimal that round-trips the value rounded to 9 significant digits.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

/// Writes the CSV encoding of `log` to any writer.
pub fn write_csv(log: &TrajectoryLog, out: &mut impl Write) -> std::io::Result<()> {
    let mut text = CSV_COLUMNS.join(",");
    text.push('\n');
    for r in &log.rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step_position,
            r.timestep,
            opt(r.delta_n),
            format_sig(r.lambda),
            opt(r.lambda_sum),
            opt(r.target_rms),
            opt(r.source_rms),
            opt(r.p),
            opt(r.gamma),
            opt(r.mask_fraction),
            opt(r.mean_variance),
        );
    }
    out.write_all(text.as_bytes())
}

pub fn export_csv(log: &TrajectoryLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_csv(log, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// `P_GRID <height> <width>` followed by one line of space-separated values per row.
pub fn write_grid(grid: &Grid, out: &mut impl Write) -> std::io::Result<()> {
    let mut text = format!("P_GRID {} {}\n", grid.height(), grid.width());
    for row in grid.data().chunks_exact(grid.width()) {
        let line: Vec<String> = row.iter().map(|&v| format_sig(v)).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
}

pub fn export_grid(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_grid(grid, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file"))?
        .split_whitespace()
        .collect();
    let (height, width) = match header.as_slice() {
        ["P_GRID", h, w] => (
            h.parse::<usize>().map_err(|_| bad("bad height"))?,
            w.parse::<usize>().map_err(|_| bad("bad width"))?,
        ),
        _ => return Err(bad("missing P_GRID header")),
    };
    let mut data = Vec::with_capacity(height * width);
    for (i, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|_| bad("unparseable value"))?);
        }
        if data.len() - before != width {
            return Err(bad(&format!("row {i} has {} values", data.len() - before)));
        }
    }
    Grid::new(height, width, data).map_err(|e| bad(&e.to_string()))
}
