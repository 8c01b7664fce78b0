//! Logical rewrites that never change query results: predicate-based model
//! pruning, model-projection pushdown and data-induced pruning.

mod columns;
mod constraint;
mod predicate;
mod pushdown;
mod stats;

use std::fmt;
use std::str::FromStr;

pub use columns::{empty_plan, prune_columns};
pub use constraint::{prune_tree, push_constraint, IntervalConstraint};
pub use predicate::{plan_predicates, predicate_based_model_pruning, predicate_pruning};
pub use pushdown::{densify, model_projection_pushdown, tree_tests_feature, used_features};
pub use stats::{data_induced_pruning, ColumnStats, PartitionSelector, PartitionStats, Stats, StatsError};

use crate::frontend::Catalog;
use crate::ir::Plan;

/// Which logical passes run. They always run in the fixed order
/// predicate pruning, projection pushdown, data-induced pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PassSet {
    pub pred_prune: bool,
    pub proj_pushdown: bool,
    pub data_induced: bool,
}

impl PassSet {
    pub const ALL: PassSet = PassSet {
        pred_prune: true,
        proj_pushdown: true,
        data_induced: true,
    };
    pub const NONE: PassSet = PassSet {
        pred_prune: false,
        proj_pushdown: false,
        data_induced: false,
    };

    /// All eight subsets, for exhaustive tests.
    pub fn subsets() -> Vec<PassSet> {
        (0..8)
            .map(|m| PassSet {
                pred_prune: m & 1 != 0,
                proj_pushdown: m & 2 != 0,
                data_induced: m & 4 != 0,
            })
            .collect()
    }
}

impl fmt::Display for PassSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.pred_prune {
            names.push("pred_prune");
        }
        if self.proj_pushdown {
            names.push("proj_pushdown");
        }
        if self.data_induced {
            names.push("data_induced");
        }
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Parses the logical part of a pass list; physical names are skipped so
/// one `--passes` list can hold both.
impl FromStr for PassSet {
    type Err = String;

    fn from_str(s: &str) -> Result<PassSet, String> {
        let mut set = PassSet::NONE;
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item {
                "all" => set = PassSet::ALL,
                "none" => {}
                "pred_prune" => set.pred_prune = true,
                "proj_pushdown" => set.proj_pushdown = true,
                "data_induced" => set.data_induced = true,
                "ml2sql" | "ml2dnn" => {}
                other => return Err(format!("unknown pass '{other}'")),
            }
        }
        Ok(set)
    }
}

/// Runs the enabled logical passes. The result has one plan per data
/// partition when partition statistics apply, otherwise a single plan.
pub fn optimize(
    plan: &Plan,
    passes: PassSet,
    stats: Option<&Stats>,
    catalog: &Catalog,
) -> Result<Vec<(PartitionSelector, Plan)>, StatsError> {
    let mut p = plan.clone();
    if passes.pred_prune {
        p = predicate_pruning(&p);
    }
    if passes.proj_pushdown {
        p = model_projection_pushdown(&p);
    }
    let plans = match (passes.data_induced, stats) {
        (true, Some(s)) => data_induced_pruning(&p, s, catalog)?,
        _ => vec![(PartitionSelector::All, p)],
    };
    Ok(plans
        .into_iter()
        .map(|(sel, p)| {
            let p = if passes.proj_pushdown && passes.data_induced {
                model_projection_pushdown(&p)
            } else {
                p
            };
            (sel, p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_lists_parse() {
        assert_eq!("all".parse::<PassSet>().unwrap(), PassSet::ALL);
        assert_eq!("none".parse::<PassSet>().unwrap(), PassSet::NONE);
        let s: PassSet = "pred_prune, ml2sql".parse().unwrap();
        assert!(s.pred_prune && !s.proj_pushdown);
        assert!("bogus".parse::<PassSet>().is_err());
        assert_eq!(PassSet::subsets().len(), 8);
        assert_eq!(PassSet::ALL.to_string(), "pred_prune,proj_pushdown,data_induced");
    }
}
