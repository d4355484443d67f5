//! CSV persistence of diagnostics series.

use std::path::Path;

use crate::diagnostics::{DiagnosticsRecord, DiagnosticsSeries, COLUMNS};
use crate::io::atomic_write;

#[derive(Debug, thiserror::Error)]
pub enum SeriesError {
    #[error("series header does not match the expected columns")]
    Header,
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shortest round-trip decimal form, so reading back is bit-exact.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub fn series_to_csv(series: &DiagnosticsSeries) -> Result<Vec<u8>, SeriesError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in &series.records {
        let cells = r.to_row().into_iter().zip(COLUMNS).map(|(x, name)| match name {
            "step" | "inner_iters" => format!("{}", x as u64),
            _ => fmt(x),
        });
        w.write_record(cells)?;
    }
    w.into_inner().map_err(|e| SeriesError::Io(e.into_error()))
}

pub fn series_from_csv(bytes: &[u8]) -> Result<DiagnosticsSeries, SeriesError> {
    let mut rd = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(SeriesError::Header);
    }
    let mut records = vec![];
    for (k, row) in rd.records().enumerate() {
        let row = row?;
        let vals: Result<Vec<f64>, _> = row.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| SeriesError::Row { row: k + 1, message: e.to_string() })?;
        let rec = DiagnosticsRecord::from_row(&vals)
            .ok_or_else(|| SeriesError::Row { row: k + 1, message: "malformed counts".into() })?;
        records.push(rec);
    }
    Ok(DiagnosticsSeries { records })
}

pub fn write_series(path: &Path, series: &DiagnosticsSeries) -> Result<(), SeriesError> {
    atomic_write(path, &series_to_csv(series)?)?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<DiagnosticsSeries, SeriesError> {
    series_from_csv(&std::fs::read(path)?)
}
