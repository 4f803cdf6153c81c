//! CSV and text artifacts. Every file is written to a temporary sibling and
//! renamed into place, so it is either complete or absent.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::observe::ObservationSet;

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Header line plus one line per row.
pub fn table_text(header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut s = header.join(",");
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(Error::LayoutMismatch(format!("row {i} has {} columns, expected {}", r.len(), header.len())));
        }
        let cells: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_atomic(path, table_text(header, rows)?.as_bytes())
}

/// `key: value` lines.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push_str(": ");
        s.push_str(v);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// Reads a numeric CSV with a header row.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|s| {
                let s = s.trim();
                match s {
                    "NaN" => Ok(f64::NAN),
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    _ => s.parse::<f64>().map_err(|_| Error::Config(format!("'{s}' is not a number"))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        k => Error::Config(format!("malformed csv: {k:?}")),
    }
}

pub const OBSERVATION_HEADER: [&str; 3] = ["x", "t", "value"];

pub fn observation_rows(obs: &ObservationSet) -> Vec<Vec<f64>> {
    obs.samples.iter().map(|s| vec![s.x, s.t, s.value]).collect()
}

/// Loads observation values into the sample layout of `layout`. Rows must list
/// the samples in layout order with matching coordinates.
pub fn read_observation_csv(path: &Path, layout: ObservationSet) -> Result<ObservationSet> {
    let (header, rows) = read_table(path)?;
    if header != OBSERVATION_HEADER {
        return Err(Error::LayoutMismatch(format!("expected columns x,t,value, found {}", header.join(","))));
    }
    if rows.len() != layout.samples.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} observation rows for {} samples",
            rows.len(),
            layout.samples.len()
        )));
    }
    let scale = (layout.grid.x_max - layout.grid.x_min).abs().max(layout.grid.t_final);
    for (r, s) in rows.iter().zip(&layout.samples) {
        if (r[0] - s.x).abs() > 1e-12 * scale || (r[1] - s.t).abs() > 1e-12 * scale {
            return Err(Error::LayoutMismatch(format!(
                "sample ({}, {}) does not match quadrature point ({}, {})",
                r[0], r[1], s.x, s.t
            )));
        }
    }
    let values: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    layout.with_values(&values)
}
