//! Artifact formats: the diagnostics table, the snapshot stream and JSON documents.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::functionals::{DiagnosticsRow, CSV_COLUMNS};

pub const CSV_FILE: &str = "diagnostics.csv";
pub const SNAPSHOT_FILE: &str = "snapshots.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Writes the table header and one line per row.
pub fn write_csv<W: Write>(mut out: W, rows: &[DiagnosticsRow]) -> Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in rows {
        writeln!(out, "{}", r.csv_values().join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows)
}

/// Reads a table back as a header and rows of numbers.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h?.split(',').map(str::to_string).collect(),
        None => return Err(Error::Numeric(format!("{}: empty table", path.display()))),
    };
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let vals = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Numeric(format!("{} line {}: {e}", path.display(), k + 2)))?;
        if vals.len() != header.len() {
            return Err(Error::Numeric(format!("{} line {}: wrong column count", path.display(), k + 2)));
        }
        rows.push(vals);
    }
    Ok((header, rows))
}

/// One line of the snapshot stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    /// Nodal values of `φ`.
    pub phi: Vec<f64>,
    /// Mean-free shape and grid mean, the exact split the integrator carries.
    pub psi: Vec<f64>,
    pub offset: f64,
    pub beta: f64,
}

pub fn snapshots(traj: &Trajectory) -> Vec<Snapshot> {
    traj.samples
        .iter()
        .map(|s| Snapshot {
            t: s.t,
            phi: s.psi.iter().map(|p| p + s.offset).collect(),
            psi: s.psi.clone(),
            offset: s.offset,
            beta: s.beta,
        })
        .collect()
}

pub fn write_snapshots<W: Write>(mut out: W, traj: &Trajectory) -> Result<()> {
    for s in snapshots(traj) {
        serde_json::to_writer(&mut out, &s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_snapshots_file(path: &Path, traj: &Trajectory) -> Result<()> {
    write_snapshots(BufWriter::new(File::create(path)?), traj)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![
            DiagnosticsRow {
                t: 0.5,
                y: 1e-300,
                dim_hol: 1,
                nu: f64::NAN,
                ..Default::default()
            };
            3
        ];
        write_csv_file(&p, &rows).unwrap();
        let (header, data) = read_csv(&p).unwrap();
        assert_eq!(header, CSV_COLUMNS);
        assert_eq!(data.len(), 3);
        assert_eq!(data[0][0], 0.5);
        assert_eq!(data[0][1], 1e-300);
        assert!(data[0][13].is_nan());
        assert_eq!(data[0][17], 1.0);
    }
}
