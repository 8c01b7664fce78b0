use std::path::Path;

use super::table::{ColumnData, Field, Table};
use crate::value::DType;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bad header: expected [{expected}], found [{found}]")]
    Header { expected: String, found: String },
    #[error("row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
}

/// Loads a headed CSV file whose header names must equal `schema` in order.
pub fn load_csv(path: &Path, schema: &[Field]) -> Result<Table, CsvError> {
    let bytes = std::fs::read(path).map_err(|e| CsvError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_csv(&bytes, schema)
}

/// Parses headed CSV text against `schema`. Rows are numbered from 1,
/// counting the first data row after the header.
pub fn parse_csv(bytes: &[u8], schema: &[Field]) -> Result<Table, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => {
            return Err(CsvError::Header {
                expected: names(schema),
                found: e.to_string(),
            })
        }
    };
    if header.len() != schema.len() || header.iter().zip(schema).any(|(h, f)| *h != f.name) {
        return Err(CsvError::Header {
            expected: names(schema),
            found: header.join(", "),
        });
    }
    let mut columns: Vec<ColumnData> = schema.iter().map(|f| ColumnData::empty(f.dtype)).collect();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CsvError::Cell {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        for ((cell, field), col) in record.iter().zip(schema).zip(columns.iter_mut()) {
            let bad = |message: String| CsvError::Cell {
                row,
                column: field.name.clone(),
                message,
            };
            if cell.is_empty() && field.dtype != DType::String {
                return Err(bad("empty cell (NULL is not supported)".into()));
            }
            match col {
                ColumnData::Float(v) => {
                    let x: f64 = cell
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("'{cell}' is not a float64")))?;
                    if !x.is_finite() {
                        return Err(bad(format!("'{cell}' is not a finite number")));
                    }
                    v.push(x);
                }
                ColumnData::Int(v) => v.push(
                    cell.trim()
                        .parse()
                        .map_err(|_| bad(format!("'{cell}' is not an int64")))?,
                ),
                ColumnData::Str(v) => v.push(cell.to_string()),
            }
        }
    }
    Ok(Table::from_parts(schema.to_vec(), columns).expect("columns built from schema"))
}

fn names(schema: &[Field]) -> String {
    schema
        .iter()
        .map(|f| f.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}
