//! Relational column pruning and the empty-result rewrite.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{NodeId, Plan, PlanOp, Port};

/// Shrinks Scan and inner Project column lists to the columns some consumer
/// reads. The root keeps its schema.
pub fn prune_columns(plan: &mut Plan) {
    let Ok(schemas) = plan.schemas() else { return };
    let Ok(order) = plan.topo_order() else { return };
    let names = |id: NodeId| -> Vec<String> {
        schemas[&id]
            .fields()
            .map(|f| f.iter().map(|x| x.name.clone()).collect())
            .unwrap_or_default()
    };
    let mut req: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
    req.entry(plan.root).or_default().extend(names(plan.root));
    let mut new_cols: BTreeMap<NodeId, Vec<String>> = BTreeMap::new();
    for &id in order.iter().rev() {
        let n = plan.node(id);
        let mine = req.get(&id).cloned().unwrap_or_default();
        let mut add = |child: NodeId, cols: &mut dyn Iterator<Item = String>| {
            req.entry(child).or_default().extend(cols);
        };
        match &n.op {
            PlanOp::Ml(_) | PlanOp::Tensor(_) => {
                for r in &n.inputs {
                    if let Port::Column(c) = &r.port {
                        add(r.node, &mut std::iter::once(c.clone()));
                    }
                }
            }
            PlanOp::Project { columns } => {
                let mut keep: Vec<String> = if id == plan.root {
                    columns.clone()
                } else {
                    columns.iter().filter(|c| mine.contains(*c)).cloned().collect()
                };
                if keep.is_empty() && !columns.is_empty() {
                    // Keep a column so the row count survives.
                    keep.push(columns[0].clone());
                }
                add(n.inputs[0].node, &mut keep.clone().into_iter());
                new_cols.insert(id, keep);
            }
            PlanOp::Filter { predicates } => {
                let cols = mine.iter().cloned().chain(predicates.iter().map(|p| p.column.clone()));
                add(n.inputs[0].node, &mut cols.collect::<Vec<_>>().into_iter());
            }
            PlanOp::Join { left, right } => {
                let lnames = names(n.inputs[0].node);
                let mut all = mine.clone();
                all.insert(left.clone());
                all.insert(right.clone());
                let (l, r): (Vec<String>, Vec<String>) = all.into_iter().partition(|c| lnames.contains(c));
                add(n.inputs[0].node, &mut l.into_iter());
                add(n.inputs[1].node, &mut r.into_iter());
            }
            PlanOp::PredictBoundary { outputs } => {
                let cols: Vec<String> = mine
                    .iter()
                    .filter(|c| !outputs.iter().any(|o| &o.name == *c))
                    .cloned()
                    .collect();
                add(n.inputs[0].node, &mut cols.into_iter());
            }
            PlanOp::Compute { bindings } => {
                let mut cols: Vec<String> = mine.iter().cloned().collect();
                for b in bindings {
                    b.expr.columns(&mut cols);
                }
                let bound: BTreeSet<&str> = bindings.iter().map(|b| b.name.as_str()).collect();
                let cols: Vec<String> = cols.into_iter().filter(|c| !bound.contains(c.as_str())).collect();
                add(n.inputs[0].node, &mut cols.into_iter());
            }
            PlanOp::Scan { alias, columns, .. } => {
                let mut keep: Vec<String> = columns
                    .iter()
                    .filter(|c| mine.contains(&format!("{alias}.{}", c.name)))
                    .map(|c| c.name.clone())
                    .collect();
                if keep.is_empty() && !columns.is_empty() {
                    keep.push(columns[0].name.clone());
                }
                new_cols.insert(id, keep);
            }
            PlanOp::Empty { .. } => {}
        }
    }
    for (id, keep) in new_cols {
        match &mut plan.node_mut(id).op {
            PlanOp::Project { columns } => *columns = keep,
            PlanOp::Scan { columns, .. } => columns.retain(|c| keep.contains(&c.name)),
            _ => {}
        }
    }
}

/// Replaces the whole plan by an `Empty` relation with the same output
/// schema; used when the predicates cannot all hold.
pub fn empty_plan(plan: &Plan, why: String) -> Plan {
    let Ok(fields) = plan.output_fields() else {
        return plan.clone();
    };
    let mut out = Plan {
        nodes: BTreeMap::new(),
        root: NodeId(0),
        column_map: vec![],
        notes: plan.notes.clone(),
    };
    out.root = out.add(PlanOp::Empty { columns: fields }, vec![], None);
    out.notes.push(why);
    out
}
