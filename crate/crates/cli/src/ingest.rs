//! CSV ingestion with line/column diagnostics.
//!
//! Input files are RFC-4180-style CSV with a required header row. Cells are
//! trimmed; an empty cell or one equal to the missing token counts as
//! missing. Line numbers in diagnostics are 1-based file lines (the header
//! is line 1), columns are 1-based.

use std::path::Path;

use hierest::km::CensoredSample;
use hierest::pattern::Dataset;

use crate::CliError;

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn record_line(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(fallback)
}

/// Reads a rectangular dataset; cells equal to `missing_token` (or empty
/// after trimming) are missing.
pub fn read_dataset(path: &Path, missing_token: &str) -> Result<Dataset<f64>, CliError> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(CliError::Input(format!(
            "{}: header row has no columns",
            path.display()
        )));
    }

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line())
                .unwrap_or(i as u64 + 2);
            CliError::Input(format!("line {line}: {e}"))
        })?;
        let line = record_line(&record, i as u64 + 2);
        if record.len() != headers.len() {
            return Err(CliError::Input(format!(
                "line {line}: expected {} cells, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() || field == missing_token {
                row.push(None);
                continue;
            }
            let value: f64 = field.parse().map_err(|_| {
                CliError::Input(format!(
                    "line {line}, column {}: cannot parse '{field}' as a number",
                    c + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Input(format!(
                    "line {line}, column {}: value is not finite",
                    c + 1
                )));
            }
            row.push(Some(value));
        }
        rows.push(row);
    }

    Dataset::new(headers, rows).map_err(|e| CliError::Input(e.to_string()))
}

/// Reads `(time, event)` pairs: exactly two columns, event flags in `{0, 1}`.
pub fn read_censored(path: &Path) -> Result<CensoredSample<f64>, CliError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: bad header: {e}", path.display())))?
        .clone();
    if headers.len() != 2 {
        return Err(CliError::Input(format!(
            "{}: expected two columns (time, event), found {}",
            path.display(),
            headers.len()
        )));
    }

    let mut observations = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
            CliError::Input(format!("line {line}: {e}"))
        })?;
        let line = record_line(&record, i as u64 + 2);
        if record.len() != 2 {
            return Err(CliError::Input(format!(
                "line {line}: expected 2 cells, found {}",
                record.len()
            )));
        }
        let time: f64 = record[0].trim().parse().map_err(|_| {
            CliError::Input(format!(
                "line {line}, column 1: cannot parse '{}' as a time",
                record[0].trim()
            ))
        })?;
        if !time.is_finite() || time <= 0.0 {
            return Err(CliError::Input(format!(
                "line {line}, column 1: times must be positive and finite"
            )));
        }
        let event = match record[1].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::Input(format!(
                    "line {line}, column 2: event flag must be 0 or 1, found '{other}'"
                )))
            }
        };
        observations.push((time, event));
    }

    CensoredSample::new(observations).map_err(|e| CliError::Input(e.to_string()))
}
