//! Data-induced pruning: column min/max statistics become interval
//! constraints, globally and per partition.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::columns::{empty_plan, prune_columns};
use super::constraint::IntervalConstraint;
use super::predicate::prune_trees_with;
use crate::executor::ColumnData;
use crate::frontend::Catalog;
use crate::ir::{Plan, PlanOp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub id: i64,
    pub min: f64,
    pub max: f64,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub null_count: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<PartitionStats>,
}

impl ColumnStats {
    /// Min/max of a numeric column; `None` for strings and empty columns.
    pub fn of_column(data: &ColumnData) -> Option<ColumnStats> {
        let xs = data.to_f64()?;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (!xs.is_empty()).then_some(ColumnStats {
            min,
            max,
            null_count: 0,
            partitions: vec![],
        })
    }
}

/// `{table: {column: ColumnStats}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stats {
    pub tables: BTreeMap<String, BTreeMap<String, ColumnStats>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("stats format error: {0}")]
    Format(String),
    #[error("stats name table '{0}', which is not in the catalog")]
    UnknownTable(String),
    #[error("stats name column '{table}.{column}', which is not in the catalog")]
    UnknownColumn { table: String, column: String },
    #[error("stats for '{table}.{column}' are inconsistent: {message}")]
    Inconsistent {
        table: String,
        column: String,
        message: String,
    },
}

impl Stats {
    pub fn from_json(text: &str) -> Result<Stats, StatsError> {
        serde_json::from_str(text).map_err(|e| StatsError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }

    pub fn is_empty(&self) -> bool {
        self.tables.values().all(BTreeMap::is_empty)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnStats> {
        self.tables.get(table)?.get(column)
    }

    /// Checks names against the catalog and min <= max everywhere.
    pub fn check(&self, catalog: &Catalog) -> Result<(), StatsError> {
        for (t, cols) in &self.tables {
            let schema = catalog.table(t).ok_or_else(|| StatsError::UnknownTable(t.clone()))?;
            for (c, s) in cols {
                let bad = |message: String| StatsError::Inconsistent {
                    table: t.clone(),
                    column: c.clone(),
                    message,
                };
                if schema.column(c).is_none() {
                    return Err(StatsError::UnknownColumn {
                        table: t.clone(),
                        column: c.clone(),
                    });
                }
                if !(s.min <= s.max) {
                    return Err(bad(format!("min {} > max {}", s.min, s.max)));
                }
                for p in &s.partitions {
                    if !(p.min <= p.max) {
                        return Err(bad(format!("partition {} has min > max", p.id)));
                    }
                    if p.min < s.min || p.max > s.max {
                        return Err(bad(format!("partition {} exceeds the column range", p.id)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Which rows a specialized plan is valid for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PartitionSelector {
    All,
    /// Rows of `table` whose `column` lies in `[min, max]`.
    Range {
        table: String,
        column: String,
        id: i64,
        min: f64,
        max: f64,
    },
}

impl fmt::Display for PartitionSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSelector::All => f.write_str("all rows"),
            PartitionSelector::Range {
                table,
                column,
                id,
                min,
                max,
            } => write!(f, "partition {id}: {table}.{column} in [{min}, {max}]"),
        }
    }
}

/// Plan column name -> (table, column) for every scanned column.
fn scanned(plan: &Plan) -> BTreeMap<String, (String, String)> {
    let mut out = BTreeMap::new();
    for n in plan.nodes.values() {
        if let PlanOp::Scan { table, alias, columns } = &n.op {
            for c in columns {
                out.insert(format!("{alias}.{}", c.name), (table.clone(), c.name.clone()));
            }
        }
    }
    out
}

fn specialize(plan: &Plan, constraints: &BTreeMap<String, IntervalConstraint>, note: String) -> Plan {
    let mut out = plan.clone();
    if prune_trees_with(&mut out, constraints) {
        out.notes.push(note);
        out.gc();
        prune_columns(&mut out);
        if out.validate().is_err() {
            return plan.clone();
        }
    }
    out
}

/// Specializes the plan's models to the value ranges the statistics
/// guarantee. With per-partition statistics on the catalog's partition
/// column, one plan per partition is returned, ordered by partition id.
pub fn data_induced_pruning(
    plan: &Plan,
    stats: &Stats,
    catalog: &Catalog,
) -> Result<Vec<(PartitionSelector, Plan)>, StatsError> {
    stats.check(catalog)?;
    if stats.is_empty() {
        return Ok(vec![(PartitionSelector::All, plan.clone())]);
    }
    let cols = scanned(plan);
    let model_cols = plan.model_input_columns();
    let mut global: BTreeMap<String, IntervalConstraint> = BTreeMap::new();
    for (name, (t, c)) in &cols {
        if !model_cols.contains(name) {
            continue;
        }
        if let Some(s) = stats.column(t, c) {
            global.insert(name.clone(), IntervalConstraint::closed(s.min, s.max));
        }
    }
    let base = specialize(plan, &global, "pruned with column statistics".into());

    // The first scanned table with a partition column and partition stats.
    let mut partitioned = None;
    for n in plan.nodes.values() {
        if let PlanOp::Scan { table, alias, .. } = &n.op {
            let Some(pc) = catalog.table(table).and_then(|t| t.partition_column.clone()) else {
                continue;
            };
            if let Some(s) = stats.column(table, &pc).filter(|s| !s.partitions.is_empty()) {
                partitioned = Some((table.clone(), alias.clone(), pc, s.partitions.clone()));
                break;
            }
        }
    }
    let Some((table, alias, pc, mut parts)) = partitioned else {
        return Ok(vec![(PartitionSelector::All, base)]);
    };
    parts.sort_by_key(|p| p.id);
    let key = format!("{alias}.{pc}");
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        let sel = PartitionSelector::Range {
            table: table.clone(),
            column: pc.clone(),
            id: p.id,
            min: p.min,
            max: p.max,
        };
        let mut cs = global.clone();
        let range = IntervalConstraint::closed(p.min, p.max);
        let plan_p = if model_cols.contains(&key) {
            match cs.get(&key).cloned().unwrap_or(IntervalConstraint::Unknown).meet(&range) {
                Some(c) => {
                    cs.insert(key.clone(), c);
                    specialize(&base, &cs, format!("specialized for {sel}"))
                }
                None => empty_plan(&base, format!("{sel} is outside the column range")),
            }
        } else {
            base.clone()
        };
        out.push((sel, plan_p));
    }
    Ok(out)
}
