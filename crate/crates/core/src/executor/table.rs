use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{format_number, DType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub dtype: DType,
}

impl Field {
    pub fn new(name: impl Into<String>, dtype: DType) -> Self {
        Field {
            name: name.into(),
            dtype,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ColumnData {
    Float(Vec<f64>),
    Int(Vec<i64>),
    Str(Vec<String>),
}

impl PartialEq for ColumnData {
    /// Floats compare by value except that NaN never appears; `0.0 == -0.0`.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ColumnData::Float(a), ColumnData::Float(b)) => a == b,
            (ColumnData::Int(a), ColumnData::Int(b)) => a == b,
            (ColumnData::Str(a), ColumnData::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl ColumnData {
    pub fn empty(dtype: DType) -> Self {
        match dtype {
            DType::Float64 => ColumnData::Float(vec![]),
            DType::Int64 => ColumnData::Int(vec![]),
            DType::String => ColumnData::Str(vec![]),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            ColumnData::Float(_) => DType::Float64,
            ColumnData::Int(_) => DType::Int64,
            ColumnData::Str(_) => DType::String,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Float(v) => v.len(),
            ColumnData::Int(v) => v.len(),
            ColumnData::Str(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> Value {
        match self {
            ColumnData::Float(v) => Value::Float(v[row]),
            ColumnData::Int(v) => Value::Int(v[row]),
            ColumnData::Str(v) => Value::Str(v[row].clone()),
        }
    }

    /// Numeric view of row `row`; strings have none.
    pub fn f64_at(&self, row: usize) -> Option<f64> {
        match self {
            ColumnData::Float(v) => Some(v[row]),
            ColumnData::Int(v) => Some(v[row] as f64),
            ColumnData::Str(_) => None,
        }
    }

    /// The whole column as float64, or `None` for strings.
    pub fn to_f64(&self) -> Option<Vec<f64>> {
        match self {
            ColumnData::Float(v) => Some(v.clone()),
            ColumnData::Int(v) => Some(v.iter().map(|x| *x as f64).collect()),
            ColumnData::Str(_) => None,
        }
    }

    pub fn take(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Float(v) => ColumnData::Float(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Int(v) => ColumnData::Int(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Str(v) => ColumnData::Str(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> ColumnData {
        match self {
            ColumnData::Float(v) => ColumnData::Float(v[start..end].to_vec()),
            ColumnData::Int(v) => ColumnData::Int(v[start..end].to_vec()),
            ColumnData::Str(v) => ColumnData::Str(v[start..end].to_vec()),
        }
    }

    /// Appends `other`, which must have the same dtype.
    pub fn extend(&mut self, other: &ColumnData) {
        match (self, other) {
            (ColumnData::Float(a), ColumnData::Float(b)) => a.extend_from_slice(b),
            (ColumnData::Int(a), ColumnData::Int(b)) => a.extend_from_slice(b),
            (ColumnData::Str(a), ColumnData::Str(b)) => a.extend_from_slice(b),
            (a, b) => panic!("cannot append {} to {}", b.dtype(), a.dtype()),
        }
    }

    /// A column of `rows` copies of `v`.
    pub fn broadcast(v: &Value, rows: usize) -> ColumnData {
        match v {
            Value::Float(x) => ColumnData::Float(vec![*x; rows]),
            Value::Int(x) => ColumnData::Int(vec![*x; rows]),
            Value::Str(s) => ColumnData::Str(vec![s.clone(); rows]),
        }
    }

    pub fn render(&self, row: usize) -> String {
        match self {
            ColumnData::Float(v) => format_number(v[row]),
            ColumnData::Int(v) => v[row].to_string(),
            ColumnData::Str(v) => v[row].clone(),
        }
    }
}

/// A columnar table. `rows` is stored explicitly so zero-column tables keep
/// their cardinality.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub fields: Vec<Field>,
    pub columns: Vec<ColumnData>,
    pub rows: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct TableError(pub String);

impl Table {
    pub fn new(fields: Vec<(&str, DType)>, columns: Vec<ColumnData>) -> Result<Table, TableError> {
        let fields = fields.into_iter().map(|(n, d)| Field::new(n, d)).collect();
        Table::from_parts(fields, columns)
    }

    pub fn from_parts(fields: Vec<Field>, columns: Vec<ColumnData>) -> Result<Table, TableError> {
        if fields.len() != columns.len() {
            return Err(TableError(format!(
                "{} fields but {} columns",
                fields.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, ColumnData::len);
        for (f, c) in fields.iter().zip(&columns) {
            if f.dtype != c.dtype() {
                return Err(TableError(format!(
                    "column '{}' declared {} but holds {}",
                    f.name,
                    f.dtype,
                    c.dtype()
                )));
            }
            if c.len() != rows {
                return Err(TableError(format!(
                    "column '{}' has {} rows, expected {rows}",
                    f.name,
                    c.len()
                )));
            }
        }
        Ok(Table {
            fields,
            columns,
            rows,
        })
    }

    pub fn empty(fields: Vec<Field>) -> Table {
        let columns = fields.iter().map(|f| ColumnData::empty(f.dtype)).collect();
        Table {
            fields,
            columns,
            rows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.index_of(name).map(|i| &self.columns[i])
    }

    pub fn take(&self, rows: &[usize]) -> Table {
        Table {
            fields: self.fields.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            rows: rows.len(),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Table {
        Table {
            fields: self.fields.clone(),
            columns: self.columns.iter().map(|c| c.slice(start, end)).collect(),
            rows: end - start,
        }
    }

    /// Appends the rows of `other`, whose schema must match.
    pub fn append(&mut self, other: &Table) -> Result<(), TableError> {
        if self.fields != other.fields {
            return Err(TableError("cannot append tables with different schemas".into()));
        }
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            a.extend(b);
        }
        self.rows += other.rows;
        Ok(())
    }

    pub fn push_column(&mut self, field: Field, data: ColumnData) {
        debug_assert_eq!(data.len(), self.rows);
        self.fields.push(field);
        self.columns.push(data);
    }

    pub fn row(&self, r: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.get(r)).collect()
    }

    /// CSV text with a header row. Floats use the round-trip number format.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(self.fields.iter().map(|f| f.name.as_str()))
            .expect("write to memory");
        for r in 0..self.rows {
            w.write_record(self.columns.iter().map(|c| c.render(r)))
                .expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_lengths_and_types() {
        assert!(Table::new(
            vec![("a", DType::Int64), ("b", DType::Float64)],
            vec![ColumnData::Int(vec![1, 2]), ColumnData::Float(vec![1.0])]
        )
        .is_err());
        assert!(Table::new(vec![("a", DType::Int64)], vec![ColumnData::Float(vec![1.0])]).is_err());
        let t = Table::new(vec![("a", DType::Int64)], vec![ColumnData::Int(vec![3, 4])]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.to_csv(), "a\n3\n4\n");
    }

    #[test]
    fn take_and_append() {
        let mut t = Table::new(
            vec![("s", DType::String)],
            vec![ColumnData::Str(vec!["x".into(), "y,z".into()])],
        )
        .unwrap();
        let picked = t.take(&[1]);
        assert_eq!(picked.row(0), vec![Value::Str("y,z".into())]);
        t.append(&picked).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.to_csv(), "s\nx\n\"y,z\"\n\"y,z\"\n");
    }
}
