//! Panel CSV parsing, numeric formatting and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use nalgebra::DMatrix;

use crate::CliError;

/// A panel as read from disk: original units, `NaN` where a cell is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvPanel {
    pub time: Vec<String>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    format!("{v:.16e}")
}

fn is_time_label(s: &str) -> bool {
    s.parse::<i64>().is_ok()
        || NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
        || NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").is_ok()
        || DateTime::parse_from_rfc3339(s).is_ok()
}

fn data_error(path: &Path, line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: line {line}: {msg}", path.display()))
}

/// Read a panel: header row of series names after a time column, one row
/// per period, empty cells missing.
pub fn read_panel(path: &Path) -> Result<CsvPanel, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| data_error(path, 1, e))?.clone();
    if header.len() < 2 {
        return Err(data_error(path, 1, "expected a time column followed by at least one series"));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if let Some(i) = names.iter().position(|s| s.is_empty()) {
        return Err(data_error(path, 1, format!("series name in column {} is empty", i + 2)));
    }
    let p = names.len();
    let mut time = Vec::new();
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line());
            data_error(path, line, e)
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != p + 1 {
            return Err(data_error(path, line, format!("expected {} fields, found {}", p + 1, record.len())));
        }
        let label = record[0].trim();
        if !is_time_label(label) {
            return Err(data_error(path, line, format!("time index `{label}` is neither an integer nor ISO-8601")));
        }
        time.push(label.to_string());
        for (i, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                cells.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => cells.push(v),
                _ => {
                    return Err(data_error(path, line, format!("series `{}`: `{cell}` is not a finite number", names[i])))
                }
            }
        }
    }
    if time.is_empty() {
        return Err(data_error(path, 2, "no data rows"));
    }
    let values = DMatrix::from_row_slice(time.len(), p, &cells);
    Ok(CsvPanel { time, names, values })
}

/// Serialise a table with the given header; numbers formatted with [`num`].
pub fn table_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_io)?;
    for row in rows {
        w.write_record(&row).map_err(csv_io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

pub fn panel_bytes(panel: &CsvPanel) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["t"];
    header.extend(panel.names.iter().map(String::as_str));
    let rows = (0..panel.values.nrows()).map(|t| {
        let mut row = vec![panel.time[t].clone()];
        row.extend(panel.values.row(t).iter().map(|v| num(*v)));
        row
    });
    table_bytes(&header, rows)
}

/// Write via a temporary file in the same directory and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Data(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
