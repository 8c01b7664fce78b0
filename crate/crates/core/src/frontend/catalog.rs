use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::value::DType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_column: Option<String>,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Table schemas keyed by table name. On disk:
/// `{"t": {"columns": [{"name": "a", "dtype": "int64"}], "partition_column": "a"}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    pub tables: BTreeMap<String, TableSchema>,
}

#[derive(Debug, thiserror::Error)]
#[error("catalog error: {0}")]
pub struct CatalogError(pub String);

impl Catalog {
    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let catalog: Catalog =
            serde_json::from_str(text).map_err(|e| CatalogError(e.to_string()))?;
        catalog.check()?;
        Ok(catalog)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes") + "\n"
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(name)
    }

    fn check(&self) -> Result<(), CatalogError> {
        for (name, t) in &self.tables {
            for (i, c) in t.columns.iter().enumerate() {
                if t.columns[..i].iter().any(|d| d.name == c.name) {
                    return Err(CatalogError(format!(
                        "table '{name}' declares column '{}' twice",
                        c.name
                    )));
                }
            }
            if let Some(p) = &t.partition_column {
                match t.column(p) {
                    None => {
                        return Err(CatalogError(format!(
                            "table '{name}' partition column '{p}' is not a column"
                        )))
                    }
                    Some(c) if !c.dtype.is_numeric() => {
                        return Err(CatalogError(format!(
                            "table '{name}' partition column '{p}' must be numeric"
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let c = Catalog::from_json(
            r#"{"t": {"columns": [{"name": "a", "dtype": "int64"}, {"name": "b", "dtype": "string"}],
                      "partition_column": "a"}}"#,
        )
        .unwrap();
        assert_eq!(c.table("t").unwrap().columns.len(), 2);
        assert_eq!(Catalog::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn bad_partition_column() {
        assert!(Catalog::from_json(
            r#"{"t": {"columns": [{"name": "a", "dtype": "int64"}], "partition_column": "z"}}"#
        )
        .is_err());
    }
}
