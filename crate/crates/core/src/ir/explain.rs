use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{NodeId, Plan, PlanNode, PlanOp, Port};
use crate::pipeline::MlOperator;

fn detail(n: &PlanNode) -> String {
    let list = |v: Vec<String>| v.join(", ");
    match &n.op {
        PlanOp::Scan {
            table,
            alias,
            columns,
        } => format!(
            "Scan {table} AS {alias} [{}]",
            list(columns.iter().map(|c| format!("{}:{}", c.name, c.dtype)).collect())
        ),
        PlanOp::Project { columns } => format!("Project [{}]", columns.join(", ")),
        PlanOp::Filter { predicates } => format!(
            "Filter [{}]",
            list(predicates.iter().map(ToString::to_string).collect())
        ),
        PlanOp::Join { left, right } => format!("Join [{left} = {right}]"),
        PlanOp::Ml(op) => op.describe(),
        PlanOp::Tensor(p) => format!(
            "Tensor(features={}, ops={}, constants={})",
            p.n_features,
            p.ops.len(),
            p.constants.len()
        ),
        PlanOp::PredictBoundary { outputs } => format!(
            "PredictBoundary [{}]",
            list(outputs.iter().map(|o| format!("{} <- {}", o.name, o.port)).collect())
        ),
        PlanOp::Compute { bindings } => format!(
            "Compute [{}]",
            list(bindings.iter().map(|b| format!("{} := {}", b.name, b.expr)).collect())
        ),
        PlanOp::Empty { columns } => format!(
            "Empty [{}]",
            list(columns.iter().map(|c| c.name.clone()).collect())
        ),
    }
}

fn header(id: NodeId, n: &PlanNode) -> String {
    let mut s = format!("{id} {}", detail(n));
    if let Some(l) = &n.label {
        let _ = write!(s, " '{l}'");
    }
    let ports: Vec<String> = n
        .inputs
        .iter()
        .filter(|r| r.port != Port::Out)
        .map(ToString::to_string)
        .collect();
    if !ports.is_empty() {
        let _ = write!(s, " <- {}", ports.join(", "));
    }
    s
}

/// Indented rendering from the root. A node reached a second time is
/// printed as a back-reference.
pub fn explain(plan: &Plan) -> String {
    fn go(plan: &Plan, id: NodeId, depth: usize, seen: &mut BTreeSet<NodeId>, out: &mut String) {
        let pad = "  ".repeat(depth);
        if !seen.insert(id) {
            let _ = writeln!(out, "{pad}{id} (shared)");
            return;
        }
        let n = plan.node(id);
        let _ = writeln!(out, "{pad}{}", header(id, n));
        if let PlanOp::Ml(MlOperator::TreeEnsemble { trees, .. }) = &n.op {
            for (i, t) in trees.iter().enumerate() {
                let _ = writeln!(out, "{pad}    tree {i}: {t}");
            }
        }
        let mut children: Vec<NodeId> = Vec::new();
        for r in &n.inputs {
            if !children.contains(&r.node) {
                children.push(r.node);
            }
        }
        for c in children {
            go(plan, c, depth + 1, seen, out);
        }
    }
    let mut out = String::new();
    let mut seen = BTreeSet::new();
    go(plan, plan.root, 0, &mut seen, &mut out);
    for note in &plan.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering; edges point from producer to consumer.
pub fn to_dot(plan: &Plan) -> String {
    let mut out = String::from("digraph plan {\n  node [shape=box];\n");
    for (id, n) in &plan.nodes {
        let mut label = detail(n);
        if let Some(l) = &n.label {
            let _ = write!(label, "\\n'{l}'");
        }
        let _ = writeln!(out, "  n{} [label=\"{}\"];", id.0, dot_escape(&label).replace("\\\\n", "\\n"));
    }
    for (id, n) in &plan.nodes {
        for r in &n.inputs {
            match &r.port {
                Port::Out => {
                    let _ = writeln!(out, "  n{} -> n{};", r.node.0, id.0);
                }
                p => {
                    let name = match p {
                        Port::Column(c) => c.clone(),
                        Port::Label => "label".into(),
                        Port::Score => "score".into(),
                        Port::Out => unreachable!(),
                    };
                    let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", r.node.0, id.0, dot_escape(&name));
                }
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontend::{normalize_predict, parse_query};
    use crate::ir::build_ir;

    #[test]
    fn running_example_names_every_node() {
        let cat = fixtures::covid_catalog();
        let ast = normalize_predict(&parse_query(fixtures::COVID_QUERY, &cat).unwrap()).unwrap();
        let plan = build_ir(&ast, &fixtures::covid_pipeline(), &cat).unwrap();
        let text = explain(&plan);
        for id in plan.nodes.keys() {
            assert!(text.contains(&format!("{id} ")), "{id} missing from\n{text}");
        }
        assert!(text.contains("tree 0: (f3 == 1 ?"));
        assert_eq!(explain(&plan), text);
    }
}
