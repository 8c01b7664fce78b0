//! Scalar values and column data types shared by every layer.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float64,
    Int64,
    String,
}

impl DType {
    pub fn is_numeric(self) -> bool {
        matches!(self, DType::Float64 | DType::Int64)
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Float64 => "float64",
            DType::Int64 => "int64",
            DType::String => "string",
        }
    }

    /// Parses the type names accepted in catalogs and `WITH (...)` clauses.
    pub fn parse(name: &str) -> Option<DType> {
        match name.to_ascii_lowercase().as_str() {
            "float64" | "float" | "double" | "real" => Some(DType::Float64),
            "int64" | "int" | "integer" | "bigint" => Some(DType::Int64),
            "string" | "varchar" | "text" => Some(DType::String),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A literal or cell value.
///
/// Serialized untagged, so JSON numbers map to `Int`/`Float` and JSON strings
/// to `Str`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn dtype(&self) -> DType {
        match self {
            Value::Int(_) => DType::Int64,
            Value::Float(_) => DType::Float64,
            Value::Str(_) => DType::String,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// True when a value of this literal can be compared against a column of `dtype`.
    pub fn compatible_with(&self, dtype: DType) -> bool {
        match self {
            Value::Str(_) => dtype == DType::String,
            Value::Int(_) => dtype.is_numeric(),
            // A fractional literal against an int column still compares numerically.
            Value::Float(_) => dtype.is_numeric(),
        }
    }

    /// Converts a numeric literal to the representation used by a column of `dtype`.
    /// Fractional floats stay floats even for int columns.
    pub fn coerce_to(&self, dtype: DType) -> Value {
        match (self, dtype) {
            (Value::Int(v), DType::Float64) => Value::Float(*v as f64),
            (Value::Float(v), DType::Int64) if v.fract() == 0.0 && v.abs() < 9.0e15 => {
                Value::Int(*v as i64)
            }
            _ => self.clone(),
        }
    }

    /// Equality used by encoders and equality predicates: numbers compare by
    /// value across int/float, strings byte-for-byte.
    pub fn matches(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Str(_), _) | (_, Value::Str(_)) => false,
            (a, b) => a.as_f64() == b.as_f64(),
        }
    }

    /// Total order within a type family; `None` across string/number.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Str(a), Value::Str(b)) => Some(a.as_bytes().cmp(b.as_bytes())),
            (Value::Str(_), _) | (_, Value::Str(_)) => None,
            (a, b) => a.as_f64()?.partial_cmp(&b.as_f64()?),
        }
    }
}

impl PartialEq for Value {
    /// Structural equality (used for plan comparison): floats by bit pattern.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Str(a), Value::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => f.write_str(&format_number(*v)),
            Value::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

/// Renders a float so that it parses back to the same bits: integral values
/// without a fraction (`60`), everything else in shortest round-trip form.
pub fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        if v == 0.0 && v.is_sign_negative() {
            return "-0".to_string();
        }
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting_round_trips() {
        for v in [60.0, 0.5, -3.0, 1e300, 1.0e-300, 0.1 + 0.2, -0.0, 123456789.125] {
            let text = format_number(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{text}");
        }
        assert_eq!(format_number(60.0), "60");
        assert_eq!(format_number(-1.0), "-1");
    }

    #[test]
    fn numeric_matching_crosses_int_and_float() {
        assert!(Value::Int(1).matches(&Value::Float(1.0)));
        assert!(!Value::Int(1).matches(&Value::Str("1".into())));
        assert_eq!(Value::Float(1.0).coerce_to(DType::Int64), Value::Int(1));
        assert_eq!(Value::Int(2).coerce_to(DType::Float64), Value::Float(2.0));
    }

    #[test]
    fn untagged_json_shapes() {
        let v: Vec<Value> = serde_json::from_str(r#"[1, 1.5, "a"]"#).unwrap();
        assert_eq!(v, vec![Value::Int(1), Value::Float(1.5), Value::Str("a".into())]);
    }
}
