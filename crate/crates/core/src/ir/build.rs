use std::collections::{BTreeMap, HashMap};

use super::{BoundOutput, ColumnBinding, IrError, NodeId, Plan, PlanOp, PlanPredicate, PortRef};
use crate::executor::Field;
use crate::frontend::{
    Catalog, ColumnRef, PredicateTarget, PredictForm, PredictInputs, Projection, QueryAst,
};
use crate::pipeline::{topo_nodes, ModelPipeline, OutPort, Source};

fn bind_err(msg: impl Into<String>) -> IrError {
    IrError::Bind(msg.into())
}

/// Candidate columns a pipeline input may bind to.
fn candidates(ast: &QueryAst, catalog: &Catalog) -> Vec<ColumnRef> {
    match &ast.predict.inputs {
        PredictInputs::Columns(cols) => cols.clone(),
        PredictInputs::Star => {
            let mut out = Vec::new();
            for src in &ast.sources {
                if let Some(schema) = catalog.table(&src.table) {
                    for c in &schema.columns {
                        out.push(ColumnRef {
                            relation: src.alias.clone(),
                            column: c.name.clone(),
                            dtype: c.dtype,
                            pos: src.pos,
                        });
                    }
                }
            }
            out
        }
    }
}

/// Builds the unified plan for a normalized query and its pipeline.
///
/// Shape, bottom to top: scans joined left-deep, a Filter with the column
/// predicates, then a Project holding exactly the columns bound to pipeline
/// inputs, which feeds the inlined ML nodes. A PredictBoundary attaches the
/// model outputs to the filtered relation; output predicates and the select
/// list sit above it.
pub fn build_ir(ast: &QueryAst, pipeline: &ModelPipeline, catalog: &Catalog) -> Result<Plan, IrError> {
    if let PredictForm::Tvf { alias } = &ast.predict.form {
        return Err(bind_err(format!(
            "PREDICT table function '{alias}' must be normalized before planning"
        )));
    }
    // Bind pipeline inputs by name.
    let cands = candidates(ast, catalog);
    let mut column_map = Vec::new();
    for input in &pipeline.inputs {
        let hits: Vec<&ColumnRef> = cands
            .iter()
            .filter(|c| c.column == input.name || c.qualified() == input.name)
            .collect();
        let col = match hits.as_slice() {
            [] => return Err(bind_err(format!("pipeline input '{}' matches no query column", input.name))),
            [one] => *one,
            many => {
                let names: Vec<String> = many.iter().map(|c| c.qualified()).collect();
                return Err(bind_err(format!(
                    "pipeline input '{}' is ambiguous: {}",
                    input.name,
                    names.join(", ")
                )));
            }
        };
        if col.dtype != input.dtype {
            return Err(bind_err(format!(
                "pipeline input '{}' is {} but column {} is {}",
                input.name,
                input.dtype,
                col.qualified(),
                col.dtype
            )));
        }
        column_map.push(ColumnBinding {
            input: input.name.clone(),
            column: col.qualified(),
        });
    }

    // Columns each scan must produce.
    let mut needed: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut need = |c: &ColumnRef| {
        let v = needed.entry(c.relation.clone()).or_default();
        if !v.contains(&c.column) {
            v.push(c.column.clone());
        }
    };
    for p in &ast.projections {
        if let Projection::Column(c) = p {
            need(c);
        }
    }
    for j in &ast.joins {
        need(&j.left);
        need(&j.right);
    }
    for p in &ast.predicates {
        if let PredicateTarget::Column(c) = &p.target {
            need(c);
        }
    }
    for b in &column_map {
        let c = cands.iter().find(|c| c.qualified() == b.column).expect("bound column");
        need(c);
    }

    let mut plan = Plan {
        nodes: BTreeMap::new(),
        root: NodeId(0),
        column_map: vec![],
        notes: vec![],
    };
    let mut scans: HashMap<String, NodeId> = HashMap::new();
    for src in &ast.sources {
        let schema = catalog
            .table(&src.table)
            .ok_or_else(|| bind_err(format!("table '{}' is not in the catalog", src.table)))?;
        let want = needed.get(&src.alias);
        let columns: Vec<Field> = schema
            .columns
            .iter()
            .filter(|c| want.is_some_and(|w| w.contains(&c.name)))
            .map(|c| Field::new(c.name.clone(), c.dtype))
            .collect();
        let id = plan.add(
            PlanOp::Scan {
                table: src.table.clone(),
                alias: src.alias.clone(),
                columns,
            },
            vec![],
            None,
        );
        scans.insert(src.alias.clone(), id);
    }
    let first = ast.sources.first().ok_or_else(|| bind_err("query has no tables"))?;
    let mut rel = scans[&first.alias];
    for j in &ast.joins {
        let right = scans[&j.right.relation];
        rel = plan.add(
            PlanOp::Join {
                left: j.left.qualified(),
                right: j.right.qualified(),
            },
            vec![PortRef::out(rel), PortRef::out(right)],
            None,
        );
    }
    let mut input_preds = Vec::new();
    let mut output_preds = Vec::new();
    for p in &ast.predicates {
        match &p.target {
            PredicateTarget::Column(c) => input_preds.push(PlanPredicate {
                column: c.qualified(),
                op: p.op,
                literal: p.literal.coerce_to(c.dtype),
            }),
            PredicateTarget::Output(name) => {
                if p.literal.as_f64().is_none() {
                    return Err(bind_err(format!(
                        "predicate on PREDICT output '{name}' needs a numeric literal"
                    )));
                }
                output_preds.push(PlanPredicate {
                    column: name.clone(),
                    op: p.op,
                    literal: p.literal.clone(),
                })
            }
        }
    }
    if !input_preds.is_empty() {
        rel = plan.add(
            PlanOp::Filter {
                predicates: input_preds,
            },
            vec![PortRef::out(rel)],
            None,
        );
    }

    let mut p_columns: Vec<String> = Vec::new();
    for b in &column_map {
        if !p_columns.contains(&b.column) {
            p_columns.push(b.column.clone());
        }
    }
    let model_input = plan.add(
        PlanOp::Project { columns: p_columns },
        vec![PortRef::out(rel)],
        Some("model input".into()),
    );

    // Inline the pipeline.
    let order = topo_nodes(pipeline).map_err(|stuck| bind_err(format!("pipeline has a cycle through {stuck:?}")))?;
    let mut ids: HashMap<&str, NodeId> = HashMap::new();
    let resolve = |src: &Source, ids: &HashMap<&str, NodeId>| -> Result<PortRef, IrError> {
        match src {
            Source::Input { input } => {
                let b = column_map
                    .iter()
                    .find(|b| &b.input == input)
                    .ok_or_else(|| bind_err(format!("undeclared pipeline input '{input}'")))?;
                Ok(PortRef::column(model_input, &b.column))
            }
            Source::Node { node, port } => {
                let id = ids
                    .get(node.as_str())
                    .ok_or_else(|| bind_err(format!("pipeline reads unknown node '{node}'")))?;
                Ok(PortRef {
                    node: *id,
                    port: super::Port::from_out_port(*port),
                })
            }
        }
    };
    for idx in order {
        let node = &pipeline.nodes[idx];
        let inputs = pipeline
            .node_inputs(&node.id)
            .iter()
            .map(|s| resolve(s, &ids))
            .collect::<Result<Vec<_>, _>>()?;
        let id = plan.add(PlanOp::Ml(node.op.clone()), inputs, Some(node.id.clone()));
        ids.insert(node.id.as_str(), id);
    }

    let mut outputs = Vec::new();
    let mut want_score = false;
    for o in &ast.predict.outputs {
        if o.port == OutPort::Score {
            if pipeline.outputs.score.is_none() {
                return Err(bind_err(format!("output '{}' asks for a score the pipeline does not produce", o.name)));
            }
            want_score = true;
        }
        outputs.push(BoundOutput {
            name: o.name.clone(),
            port: o.port,
        });
    }
    let mut b_inputs = vec![PortRef::out(rel), resolve(&pipeline.outputs.label, &ids)?];
    if want_score {
        let s = pipeline.outputs.score.as_ref().expect("checked");
        b_inputs.push(resolve(s, &ids)?);
    }
    let mut top = plan.add(PlanOp::PredictBoundary { outputs }, b_inputs, None);
    if !output_preds.is_empty() {
        top = plan.add(
            PlanOp::Filter {
                predicates: output_preds,
            },
            vec![PortRef::out(top)],
            None,
        );
    }
    let columns = ast
        .projections
        .iter()
        .map(|p| match p {
            Projection::Column(c) => c.qualified(),
            Projection::Output(n) => n.clone(),
        })
        .collect();
    plan.root = plan.add(PlanOp::Project { columns }, vec![PortRef::out(top)], None);
    plan.column_map = column_map;
    plan.validate()?;
    Ok(plan)
}
