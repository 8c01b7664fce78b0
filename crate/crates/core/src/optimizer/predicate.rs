//! Predicate-based model pruning: equality predicates on model inputs become
//! Constant nodes, and all input constraints are pushed through the
//! featurizers to remove decided tree tests.

use std::collections::BTreeMap;

use super::columns::{empty_plan, prune_columns};
use super::constraint::{prune_tree, push_constraint, IntervalConstraint};
use crate::frontend::CmpOp;
use crate::ir::{NodeId, Plan, PlanOp, PlanPredicate, Port, PortRef, Schema};
use crate::pipeline::{Aggregate, DecisionTree, MlOperator, OutPort, PostTransform, Task, TreeNode};
use crate::value::{DType, Value};

/// Per-column constraints implied by `predicates`, or `Err(column)` when the
/// predicates on some column contradict each other.
pub(crate) fn column_constraints(
    plan: &Plan,
    predicates: &[PlanPredicate],
) -> Result<BTreeMap<String, IntervalConstraint>, String> {
    let mut dtypes: BTreeMap<String, DType> = BTreeMap::new();
    if let Ok(schemas) = plan.schemas() {
        for s in schemas.values() {
            if let Schema::Relation(fields) = s {
                for f in fields {
                    dtypes.insert(f.name.clone(), f.dtype);
                }
            }
        }
    }
    let mut out: BTreeMap<String, IntervalConstraint> = BTreeMap::new();
    for p in predicates {
        let Some(dtype) = dtypes.get(&p.column) else { continue };
        let c = IntervalConstraint::from_predicate(p.op, &p.literal, *dtype).ok_or_else(|| p.to_string())?;
        let prev = out.remove(&p.column).unwrap_or(IntervalConstraint::Unknown);
        let met = prev.meet(&c).ok_or_else(|| p.column.clone())?;
        out.insert(p.column.clone(), met);
    }
    Ok(out)
}

/// The predicates the plan's Filters apply to model inputs and to PREDICT
/// outputs, respectively.
pub fn plan_predicates(plan: &Plan) -> (Vec<PlanPredicate>, Vec<PlanPredicate>) {
    let Some(b) = plan.boundary() else {
        return (vec![], vec![]);
    };
    let PlanOp::PredictBoundary { outputs } = &plan.node(b).op else {
        unreachable!()
    };
    let input = plan.filters_below(b);
    let mut output = Vec::new();
    for n in plan.nodes.values() {
        if let PlanOp::Filter { predicates } = &n.op {
            output.extend(
                predicates
                    .iter()
                    .filter(|p| outputs.iter().any(|o| o.name == p.column))
                    .cloned(),
            );
        }
    }
    (input, output)
}

/// Computes the constraint vector of every ML node's `Out` port, in
/// topological order, and prunes each tree ensemble with the constraints on
/// its inputs. Returns whether any tree changed.
pub(crate) fn prune_trees_with(plan: &mut Plan, columns: &BTreeMap<String, IntervalConstraint>) -> bool {
    let Ok(order) = plan.topo_order() else { return false };
    let Ok(schemas) = plan.schemas() else { return false };
    let mut known: BTreeMap<NodeId, Vec<IntervalConstraint>> = BTreeMap::new();
    let mut changed = false;
    for id in order {
        let n = plan.node(id);
        let PlanOp::Ml(op) = &n.op else { continue };
        let mut input = Vec::new();
        for r in &n.inputs {
            match &r.port {
                Port::Column(c) => input.push(columns.get(c).cloned().unwrap_or(IntervalConstraint::Unknown)),
                Port::Out => match known.get(&r.node) {
                    Some(v) => input.extend(v.iter().cloned()),
                    None => {
                        let w = schemas[&r.node].port(OutPort::Out).map_or(0, <[_]>::len);
                        input.extend(std::iter::repeat(IntervalConstraint::Unknown).take(w));
                    }
                },
                Port::Label | Port::Score => input.push(IntervalConstraint::Unknown),
            }
        }
        if let MlOperator::TreeEnsemble {
            trees,
            aggregate,
            task,
            post,
        } = op
        {
            let pruned: Vec<DecisionTree> = trees.iter().map(|t| prune_tree(t, &input)).collect();
            if &pruned != trees {
                let new = MlOperator::TreeEnsemble {
                    trees: pruned,
                    aggregate: *aggregate,
                    task: *task,
                    post: *post,
                };
                plan.node_mut(id).op = PlanOp::Ml(new);
                changed = true;
            }
        } else if !op.is_model() {
            known.insert(id, push_constraint(op, &input));
        }
    }
    changed
}

/// Label and score a single-tree ensemble reports for one leaf value,
/// computed exactly as the row-wise evaluator does.
fn leaf_outputs(leaf: &[f64], aggregate: Aggregate, task: Task, post: PostTransform) -> (f64, f64) {
    if aggregate == Aggregate::Vote {
        let votes = if leaf[1] > leaf[0] { 1.0 } else { 0.0 };
        let label = if votes > 1.0 - votes { 1.0 } else { 0.0 };
        return (label, votes / 1.0);
    }
    let s = match post {
        PostTransform::None => leaf[0],
        PostTransform::Logistic => crate::executor::logistic(leaf[0]),
    };
    let label = match task {
        Task::BinaryClassification => {
            if s >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        Task::Regression => s,
    };
    (label, s)
}

/// Collapses every subtree whose leaves all fail `keep` into its first leaf.
fn collapse_failing(tree: &DecisionTree, keep: &impl Fn(&[f64]) -> bool) -> DecisionTree {
    fn go(t: &DecisionTree, at: usize, keep: &impl Fn(&[f64]) -> bool) -> (DecisionTree, bool) {
        match &t.nodes[at] {
            TreeNode::Leaf { value } => (DecisionTree::leaf(value.clone()), keep(value)),
            TreeNode::Internal {
                feature,
                cmp,
                threshold,
                true_child,
                false_child,
            } => {
                let (a, ka) = go(t, *true_child, keep);
                let (b, kb) = go(t, *false_child, keep);
                if !ka && !kb {
                    let first = a.leaf_value(a.leaves()[0]).to_vec();
                    return (DecisionTree::leaf(first), false);
                }
                (DecisionTree::split(*feature, *cmp, *threshold, a, b), true)
            }
        }
    }
    go(tree, 0, keep).0
}

/// Uses predicates on PREDICT outputs to drop tree regions whose rows the
/// output filter discards anyway. Only single-tree ensembles are handled:
/// with several trees no single leaf decides the output.
pub(crate) fn prune_with_outputs(plan: &mut Plan, output: &[PlanPredicate]) -> bool {
    let Some(b) = plan.boundary() else { return false };
    let bnode = plan.node(b).clone();
    let PlanOp::PredictBoundary { outputs } = &bnode.op else {
        unreachable!()
    };
    // Predicates grouped by the model node and port they constrain.
    let mut per_node: BTreeMap<NodeId, Vec<(OutPort, CmpOp, Value)>> = BTreeMap::new();
    for p in output {
        let Some(o) = outputs.iter().find(|o| o.name == p.column) else { continue };
        let slot = if o.port == OutPort::Score { 2 } else { 1 };
        let Some(r) = bnode.inputs.get(slot) else { continue };
        let port = match r.port {
            Port::Label => OutPort::Label,
            Port::Score => OutPort::Score,
            _ => continue,
        };
        per_node.entry(r.node).or_default().push((port, p.op, p.literal.clone()));
    }
    let mut changed = false;
    for (id, preds) in per_node {
        let Some(MlOperator::TreeEnsemble {
            trees,
            aggregate,
            task,
            post,
        }) = plan.node(id).op.ml().cloned()
        else {
            continue;
        };
        if trees.len() != 1 {
            continue;
        }
        let keep = |leaf: &[f64]| {
            let (label, score) = leaf_outputs(leaf, aggregate, task, post);
            preds.iter().all(|(port, op, lit)| {
                let v = if *port == OutPort::Score { score } else { label };
                op.eval(&Value::Float(v), lit)
            })
        };
        let t = collapse_failing(&trees[0], &keep);
        if t != trees[0] {
            plan.node_mut(id).op = PlanOp::Ml(MlOperator::TreeEnsemble {
                trees: vec![t],
                aggregate,
                task,
                post,
            });
            changed = true;
        }
    }
    changed
}

/// Step 1: every model input pinned by an equality predicate is read from a
/// Constant node instead of the relational projection.
fn substitute_constants(plan: &mut Plan, columns: &BTreeMap<String, IntervalConstraint>) {
    let read = plan.model_input_columns();
    for c in read {
        let Some(IntervalConstraint::Const(v)) = columns.get(&c) else { continue };
        let konst = plan.add(
            PlanOp::Ml(MlOperator::Constant { values: vec![v.clone()] }),
            vec![],
            Some(format!("{c} = {v}")),
        );
        let ids: Vec<NodeId> = plan.ml_nodes();
        for id in ids {
            for r in plan.node_mut(id).inputs.iter_mut() {
                if r.port == Port::Column(c.clone()) {
                    *r = PortRef::out(konst);
                }
            }
        }
    }
}

/// Predicate-based model pruning with explicit predicate lists. Predicates
/// must be ones the plan's Filters enforce; rows violating them are assumed
/// to never reach the model.
pub fn predicate_based_model_pruning(
    plan: &Plan,
    input: &[PlanPredicate],
    output: &[PlanPredicate],
) -> Plan {
    if input.is_empty() && output.is_empty() {
        return plan.clone();
    }
    let columns = match column_constraints(plan, input) {
        Ok(c) => c,
        Err(col) => return empty_plan(plan, format!("predicates on {col} cannot all hold")),
    };
    let mut out = plan.clone();
    substitute_constants(&mut out, &columns);
    prune_trees_with(&mut out, &columns);
    prune_with_outputs(&mut out, output);
    out.gc();
    prune_columns(&mut out);
    match out.validate() {
        Ok(()) => out,
        Err(_) => plan.clone(),
    }
}

/// Predicate pruning driven by the plan's own Filter predicates.
pub fn predicate_pruning(plan: &Plan) -> Plan {
    let (input, output) = plan_predicates(plan);
    predicate_based_model_pruning(plan, &input, &output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontend::{normalize_predict, parse_query};
    use crate::ir::build_ir;
    use crate::pipeline::OpKind;

    fn covid_plan() -> Plan {
        let cat = fixtures::covid_catalog();
        let ast = normalize_predict(&parse_query(fixtures::COVID_QUERY, &cat).unwrap()).unwrap();
        build_ir(&ast, &fixtures::covid_pipeline(), &cat).unwrap()
    }

    #[test]
    fn asthma_becomes_a_constant() {
        let plan = covid_plan();
        let out = predicate_pruning(&plan);
        assert!(!out.model_input_columns().contains("pi.asthma"));
        assert_eq!(out.count_kind(OpKind::Constant), 1);
        let tree = out
            .nodes
            .values()
            .find_map(|n| match &n.op {
                PlanOp::Ml(MlOperator::TreeEnsemble { trees, .. }) => Some(trees[0].clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(tree.used_features(), vec![0, 4, 5]);
        assert!(out.tree_node_count() < plan.tree_node_count());
        // The Filter still needs the column.
        assert!(out.scanned_column_names().contains(&"pi.asthma".to_string()));
    }

    #[test]
    fn no_predicates_no_change() {
        let plan = covid_plan();
        assert_eq!(predicate_based_model_pruning(&plan, &[], &[]), plan);
    }

    #[test]
    fn conflicting_equalities_give_an_empty_plan() {
        let plan = covid_plan();
        let p = |v| PlanPredicate {
            column: "pi.asthma".into(),
            op: CmpOp::Eq,
            literal: Value::Int(v),
        };
        let out = predicate_based_model_pruning(&plan, &[p(1), p(0)], &[]);
        assert!(out.is_empty_result());
        assert_eq!(out.output_fields().unwrap(), plan.output_fields().unwrap());
    }

    #[test]
    fn collapse_keeps_passing_leaves() {
        let t = fixtures::covid_tree();
        let c = collapse_failing(&t, &|v: &[f64]| v[0] == 1.0);
        assert_eq!(c, t);
        let c = collapse_failing(&t, &|_: &[f64]| false);
        assert_eq!(c.node_count(), 1);
    }
}
