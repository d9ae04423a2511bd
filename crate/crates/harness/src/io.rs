//! Dataset CSV: one sample per row, features then an optional label column.
//! A header line is allowed and detected by a non-numeric first row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use dpstat_core::Dataset;

use crate::error::{HarnessError, Result};

pub fn read_dataset(path: &Path, labeled: bool) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    parse_dataset(f, labeled)
}

pub fn parse_dataset<R: Read>(reader: R, labeled: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(HarnessError::Parse { line: i + 1, reason: e.to_string() }),
        };
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(HarnessError::Parse {
                    line: i + 1,
                    reason: format!("expected {w} fields, got {}", row.len()),
                })
            }
            _ => {}
        }
        if labeled {
            let (y, x) = row.split_last().ok_or(HarnessError::Parse { line: i + 1, reason: "empty row".into() })?;
            features.extend_from_slice(x);
            labels.push(*y);
        } else {
            features.extend_from_slice(&row);
        }
    }
    let width = width.ok_or(HarnessError::Parse { line: 0, reason: "no data rows".into() })?;
    let dim = if labeled { width - 1 } else { width };
    Ok(Dataset::new(dim, features, labeled.then_some(labels))?)
}

/// Writes full-precision decimals that parse back to the same bits.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let bytes = dataset_to_csv(data)?;
    f.write_all(&bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn dataset_to_csv(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    if data.has_labels() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.features(i).iter().map(|v| v.to_string()).collect();
        if data.has_labels() {
            row.push(data.label(i).to_string());
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<buffer>", e.into_error()))
}
