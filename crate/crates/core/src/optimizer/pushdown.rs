//! Model-projection pushdown: models are densified over the features they
//! use, and the resulting FeatureExtractor is pushed toward the scans.

use std::collections::BTreeMap;

use super::columns::prune_columns;
use crate::ir::{NodeId, Plan, PlanOp, Port, PortRef, Schema};
use crate::pipeline::{MlOperator, TreeNode};

/// Feature positions a model reads; `None` for non-models.
pub fn used_features(op: &MlOperator) -> Option<Vec<usize>> {
    match op {
        MlOperator::TreeEnsemble { trees, .. } => {
            let mut all: Vec<usize> = trees.iter().flat_map(|t| t.used_features()).collect();
            all.sort_unstable();
            all.dedup();
            Some(all)
        }
        // A zero weight contributes nothing to the dot product.
        MlOperator::LinearModel { weights, .. } => Some(
            weights
                .iter()
                .enumerate()
                .filter(|(_, w)| w.iter().any(|x| *x != 0.0))
                .map(|(i, _)| i)
                .collect(),
        ),
        _ => None,
    }
}

/// The model restricted to `used` (sorted), renumbered `0..used.len()`.
pub fn densify(op: &MlOperator, used: &[usize]) -> MlOperator {
    match op {
        MlOperator::TreeEnsemble {
            trees,
            aggregate,
            task,
            post,
        } => MlOperator::TreeEnsemble {
            trees: trees
                .iter()
                .map(|t| t.remap_features(|f| used.binary_search(&f).expect("used feature")))
                .collect(),
            aggregate: *aggregate,
            task: *task,
            post: *post,
        },
        MlOperator::LinearModel {
            weights,
            intercepts,
            post,
        } => MlOperator::LinearModel {
            weights: used.iter().map(|&i| weights[i].clone()).collect(),
            intercepts: intercepts.clone(),
            post: *post,
        },
        other => other.clone(),
    }
}

fn port_width(schemas: &BTreeMap<NodeId, Schema>, r: &PortRef) -> usize {
    match &r.port {
        Port::Column(_) => 1,
        p => p
            .as_out_port()
            .and_then(|op| schemas[&r.node].port(op))
            .map_or(0, <[_]>::len),
    }
}

/// Pass 1: every model with unused input positions reads a dense copy of
/// its inputs through a new FeatureExtractor.
fn densify_models(plan: &mut Plan) -> bool {
    let Ok(schemas) = plan.schemas() else { return false };
    let mut changed = false;
    for id in plan.ml_nodes() {
        let n = plan.node(id).clone();
        let PlanOp::Ml(op) = &n.op else { continue };
        let Some(used) = used_features(op) else { continue };
        let width: usize = n.inputs.iter().map(|r| port_width(&schemas, r)).sum();
        if used.len() == width {
            continue;
        }
        let label = n.label.as_deref().unwrap_or("model");
        let fe = plan.add(
            PlanOp::Ml(MlOperator::FeatureExtractor { indices: used.clone() }),
            n.inputs.clone(),
            Some(format!("{label} features")),
        );
        let node = plan.node_mut(id);
        node.op = PlanOp::Ml(densify(op, &used));
        node.inputs = vec![PortRef::out(fe)];
        changed = true;
    }
    changed
}

fn sorted(ix: &[usize]) -> bool {
    ix.windows(2).all(|w| w[0] <= w[1])
}

/// Applies one rewrite around FeatureExtractor `id`, if any rule fits.
fn push_one(plan: &mut Plan, schemas: &BTreeMap<NodeId, Schema>, id: NodeId) -> bool {
    let n = plan.node(id).clone();
    let Some(MlOperator::FeatureExtractor { indices }) = n.op.ml() else {
        return false;
    };
    let me = PortRef::out(id);
    let label = n.label.clone();
    if indices.is_empty() {
        let k = plan.add(PlanOp::Ml(MlOperator::Constant { values: vec![] }), vec![], label);
        plan.redirect(&me, &PortRef::out(k));
        return true;
    }
    let widths: Vec<usize> = n.inputs.iter().map(|r| port_width(schemas, r)).collect();
    if n.inputs.len() > 1 {
        if !sorted(indices) {
            return false;
        }
        let mut pieces = Vec::new();
        let mut off = 0;
        for (r, w) in n.inputs.iter().zip(&widths) {
            let local: Vec<usize> = indices
                .iter()
                .filter(|&&i| i >= off && i < off + w)
                .map(|i| i - off)
                .collect();
            if !local.is_empty() {
                pieces.push(plan.add(
                    PlanOp::Ml(MlOperator::FeatureExtractor { indices: local }),
                    vec![r.clone()],
                    label.clone(),
                ));
            }
            off += w;
        }
        let target = if pieces.len() == 1 {
            pieces[0]
        } else {
            plan.add(
                PlanOp::Ml(MlOperator::Concat { arity: pieces.len() }),
                pieces.iter().map(|p| PortRef::out(*p)).collect(),
                label,
            )
        };
        plan.redirect(&me, &PortRef::out(target));
        return true;
    }
    let src = n.inputs[0].clone();
    if widths[0] == indices.len() && indices.iter().enumerate().all(|(i, x)| i == *x) {
        plan.redirect(&me, &src);
        return true;
    }
    if src.port != Port::Out {
        return false;
    }
    let u = plan.node(src.node).clone();
    let Some(uop) = u.op.ml() else { return false };
    match uop {
        MlOperator::Concat { .. } => {
            plan.node_mut(id).inputs = u.inputs.clone();
            true
        }
        MlOperator::FeatureExtractor { indices: inner } => {
            let composed = indices.iter().map(|&i| inner[i]).collect();
            let node = plan.node_mut(id);
            node.op = PlanOp::Ml(MlOperator::FeatureExtractor { indices: composed });
            node.inputs = u.inputs.clone();
            true
        }
        MlOperator::Scaler { offsets, scales } => {
            let fe = plan.add(
                PlanOp::Ml(MlOperator::FeatureExtractor { indices: indices.clone() }),
                u.inputs.clone(),
                label,
            );
            let s = plan.add(
                PlanOp::Ml(MlOperator::Scaler {
                    offsets: indices.iter().map(|&i| offsets[i]).collect(),
                    scales: indices.iter().map(|&i| scales[i]).collect(),
                }),
                vec![PortRef::out(fe)],
                u.label.clone(),
            );
            plan.redirect(&me, &PortRef::out(s));
            true
        }
        MlOperator::OneHotEncoder { categories } => {
            if !indices.windows(2).all(|w| w[0] < w[1]) {
                return false;
            }
            // Output position -> (input column, category).
            let mut slots = Vec::new();
            for (j, cats) in categories.iter().enumerate() {
                for k in 0..cats.len() {
                    slots.push((j, k));
                }
            }
            let mut cols: Vec<usize> = Vec::new();
            let mut kept: Vec<Vec<crate::value::Value>> = Vec::new();
            for &i in indices {
                let (j, k) = slots[i];
                if cols.last() != Some(&j) {
                    cols.push(j);
                    kept.push(Vec::new());
                }
                kept.last_mut().expect("pushed").push(categories[j][k].clone());
            }
            let fe = plan.add(
                PlanOp::Ml(MlOperator::FeatureExtractor { indices: cols }),
                u.inputs.clone(),
                label,
            );
            let ohe = plan.add(
                PlanOp::Ml(MlOperator::OneHotEncoder { categories: kept }),
                vec![PortRef::out(fe)],
                u.label.clone(),
            );
            plan.redirect(&me, &PortRef::out(ohe));
            true
        }
        MlOperator::Constant { values } => {
            let k = plan.add(
                PlanOp::Ml(MlOperator::Constant {
                    values: indices.iter().map(|&i| values[i].clone()).collect(),
                }),
                vec![],
                u.label.clone(),
            );
            plan.redirect(&me, &PortRef::out(k));
            true
        }
        _ => false,
    }
}

/// Drops zero-width inputs of a Concat and bypasses single-input Concats.
fn tidy_concat(plan: &mut Plan, schemas: &BTreeMap<NodeId, Schema>, id: NodeId) -> bool {
    let n = plan.node(id).clone();
    let Some(MlOperator::Concat { .. }) = n.op.ml() else {
        return false;
    };
    let live: Vec<PortRef> = n.inputs.iter().filter(|r| port_width(schemas, r) > 0).cloned().collect();
    if live.len() == 1 && n.inputs.len() > 1 || n.inputs.len() == 1 {
        let only = live.first().cloned().unwrap_or_else(|| n.inputs[0].clone());
        plan.redirect(&PortRef::out(id), &only);
        return true;
    }
    if live.len() < n.inputs.len() && !live.is_empty() {
        let node = plan.node_mut(id);
        node.op = PlanOp::Ml(MlOperator::Concat { arity: live.len() });
        node.inputs = live;
        return true;
    }
    false
}

/// Pass 2: rewrites to fixpoint.
fn push_down(plan: &mut Plan) {
    loop {
        plan.gc();
        let Ok(schemas) = plan.schemas() else { return };
        let mut progressed = false;
        for id in plan.ml_nodes() {
            if !plan.nodes.contains_key(&id) {
                continue;
            }
            if push_one(plan, &schemas, id) || tidy_concat(plan, &schemas, id) {
                progressed = true;
                break;
            }
        }
        if !progressed {
            return;
        }
    }
}

pub fn model_projection_pushdown(plan: &Plan) -> Plan {
    let mut out = plan.clone();
    if !densify_models(&mut out) {
        // Still collapse leftovers from earlier rewrites.
        let before = out.clone();
        push_down(&mut out);
        if out == before {
            return plan.clone();
        }
    } else {
        push_down(&mut out);
    }
    out.gc();
    prune_columns(&mut out);
    match out.validate() {
        Ok(()) => out,
        Err(_) => plan.clone(),
    }
}

/// Whether any tree of the plan tests one of `features` of its input; used
/// by tests and diagnostics.
pub fn tree_tests_feature(op: &MlOperator, feature: usize) -> bool {
    match op {
        MlOperator::TreeEnsemble { trees, .. } => trees.iter().any(|t| {
            let mut hit = false;
            t.visit_dfs(0, &mut |_, n| {
                if let TreeNode::Internal { feature: f, .. } = n {
                    hit |= *f == feature;
                }
            });
            hit
        }),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontend::{normalize_predict, parse_query};
    use crate::ir::build_ir;
    use crate::optimizer::predicate_pruning;
    use crate::pipeline::OpKind;

    fn covid_plan() -> Plan {
        let cat = fixtures::covid_catalog();
        let ast = normalize_predict(&parse_query(fixtures::COVID_QUERY, &cat).unwrap()).unwrap();
        build_ir(&ast, &fixtures::covid_pipeline(), &cat).unwrap()
    }

    #[test]
    fn full_model_is_left_alone() {
        let plan = covid_plan();
        assert_eq!(model_projection_pushdown(&plan), plan);
    }

    #[test]
    fn running_example_drops_bpm() {
        let pruned = predicate_pruning(&covid_plan());
        let out = model_projection_pushdown(&pruned);
        let tree = out
            .nodes
            .values()
            .find_map(|n| match &n.op {
                PlanOp::Ml(MlOperator::TreeEnsemble { trees, .. }) => Some(trees[0].clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(tree, fixtures::covid_pruned_dense_tree());
        assert!(!out.scanned_column_names().contains(&"pt.bpm".to_string()));
        assert_eq!(out.count_kind(OpKind::FeatureExtractor), 0);
        assert_eq!(out.count_kind(OpKind::Concat), 1);
        assert_eq!(out.scanned_columns(), pruned.scanned_columns() - 1);
        assert_eq!(model_projection_pushdown(&out), out);
    }

    #[test]
    fn linear_zero_weights_are_unused() {
        let op = MlOperator::LinearModel {
            weights: vec![vec![0.0], vec![2.0], vec![-0.0]],
            intercepts: vec![1.0],
            post: Default::default(),
        };
        assert_eq!(used_features(&op), Some(vec![1]));
    }
}
