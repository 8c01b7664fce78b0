//! Compiles ML operators to SQL expressions. The arithmetic mirrors the
//! row-wise evaluator term for term so results agree bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use super::expr::{BinOp, Func, SqlExpr};
use crate::frontend::CmpOp;
use crate::ir::{Binding, Plan, PlanOp, PortRef};
use crate::pipeline::{
    topo_nodes, Aggregate, Cmp, DecisionTree, MlOperator, ModelPipeline, Norm, OpKind, OutPort,
    PostTransform, Source, Task, TreeNode,
};
use crate::value::{DType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dialect {
    /// Our own engine: derived tables need no alias.
    #[default]
    Neutral,
    /// Adds the derived-table aliases strict engines require.
    Ansi,
}

#[derive(Debug, Clone, Default)]
pub struct Ml2SqlConfig {
    /// Operator kinds the target engine cannot express; hitting one fails
    /// the whole compilation.
    pub unsupported: BTreeSet<OpKind>,
    pub dialect: Dialect,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Ml2SqlError {
    #[error("compilation failed at {0}")]
    CompilationFailed(String),
    #[error("cannot render plan as SQL: {0}")]
    Unsupported(String),
}

/// A pipeline compiled to expressions over its input columns. `bindings`
/// are evaluated in order and may refer to earlier ones by name.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledPipeline {
    pub bindings: Vec<(String, SqlExpr)>,
    pub label: SqlExpr,
    pub score: Option<SqlExpr>,
}

fn cmp_op(c: Cmp) -> CmpOp {
    match c {
        Cmp::Lt => CmpOp::Lt,
        Cmp::Le => CmpOp::Le,
        Cmp::Gt => CmpOp::Gt,
        Cmp::Ge => CmpOp::Ge,
        Cmp::Eq => CmpOp::Eq,
    }
}

pub fn literal(v: &Value) -> SqlExpr {
    match v {
        Value::Str(s) => SqlExpr::Str(s.clone()),
        other => SqlExpr::num(other.as_f64().expect("numeric")),
    }
}

/// Nested CASE for one tree; `leaf` turns a leaf vector into its expression.
pub fn compile_tree_with(tree: &DecisionTree, features: &[SqlExpr], leaf: &impl Fn(&[f64]) -> SqlExpr) -> SqlExpr {
    fn go(t: &DecisionTree, at: usize, fs: &[SqlExpr], leaf: &impl Fn(&[f64]) -> SqlExpr) -> SqlExpr {
        match &t.nodes[at] {
            TreeNode::Leaf { value } => leaf(value),
            TreeNode::Internal {
                feature,
                cmp,
                threshold,
                true_child,
                false_child,
            } => SqlExpr::if_else(
                SqlExpr::cmp(cmp_op(*cmp), fs[*feature].clone(), SqlExpr::num(*threshold)),
                go(t, *true_child, fs, leaf),
                go(t, *false_child, fs, leaf),
            ),
        }
    }
    go(tree, 0, features, leaf)
}

/// Nested CASE returning the first leaf value.
pub fn compile_tree(tree: &DecisionTree, features: &[SqlExpr]) -> SqlExpr {
    compile_tree_with(tree, features, &|v| SqlExpr::num(v[0]))
}

fn sum(terms: Vec<SqlExpr>) -> SqlExpr {
    let mut it = terms.into_iter();
    let first = it.next().unwrap_or(SqlExpr::num(0.0));
    it.fold(first, |acc, t| SqlExpr::bin(BinOp::Add, acc, t))
}

fn threshold(score: SqlExpr) -> SqlExpr {
    SqlExpr::if_else(
        SqlExpr::cmp(CmpOp::Ge, score, SqlExpr::num(0.5)),
        SqlExpr::num(1.0),
        SqlExpr::num(0.0),
    )
}

fn post(p: PostTransform, z: SqlExpr) -> SqlExpr {
    match p {
        PostTransform::None => z,
        PostTransform::Logistic => SqlExpr::bin(
            BinOp::Div,
            SqlExpr::num(1.0),
            SqlExpr::bin(
                BinOp::Add,
                SqlExpr::num(1.0),
                SqlExpr::func(Func::Exp, vec![SqlExpr::neg(z)]),
            ),
        ),
    }
}

/// Compiles one operator over the expressions of its (concatenated)
/// inputs. Models return the score with the label referring to it, so the
/// caller can bind the score once.
pub fn compile_operator(op: &MlOperator, x: &[SqlExpr]) -> Result<Vec<(OutPort, Vec<SqlExpr>)>, Ml2SqlError> {
    let out = |v: Vec<SqlExpr>| Ok(vec![(OutPort::Out, v)]);
    match op {
        MlOperator::Scaler { offsets, scales } => out(x
            .iter()
            .zip(offsets.iter().zip(scales))
            .map(|(e, (o, s))| {
                let mut e = e.clone();
                if *o != 0.0 {
                    e = SqlExpr::bin(BinOp::Sub, e, SqlExpr::num(*o));
                }
                if *s != 1.0 {
                    e = SqlExpr::bin(BinOp::Mul, e, SqlExpr::num(*s));
                }
                e
            })
            .collect()),
        MlOperator::Normalizer { norm } => {
            if x.is_empty() {
                return out(vec![]);
            }
            let n = match norm {
                Norm::L1 => sum(x.iter().map(|e| SqlExpr::func(Func::Abs, vec![e.clone()])).collect()),
                Norm::L2 => SqlExpr::func(
                    Func::Sqrt,
                    vec![sum(x.iter().map(|e| SqlExpr::bin(BinOp::Mul, e.clone(), e.clone())).collect())],
                ),
                Norm::Max if x.len() == 1 => SqlExpr::func(Func::Abs, vec![x[0].clone()]),
                Norm::Max => SqlExpr::func(
                    Func::Greatest,
                    x.iter().map(|e| SqlExpr::func(Func::Abs, vec![e.clone()])).collect(),
                ),
            };
            out(x
                .iter()
                .map(|e| {
                    SqlExpr::if_else(
                        SqlExpr::cmp(CmpOp::Eq, n.clone(), SqlExpr::num(0.0)),
                        e.clone(),
                        SqlExpr::bin(BinOp::Div, e.clone(), n.clone()),
                    )
                })
                .collect())
        }
        MlOperator::OneHotEncoder { categories } => {
            let mut v = Vec::new();
            for (e, cats) in x.iter().zip(categories) {
                for c in cats {
                    v.push(SqlExpr::if_else(
                        SqlExpr::cmp(CmpOp::Eq, e.clone(), literal(c)),
                        SqlExpr::num(1.0),
                        SqlExpr::num(0.0),
                    ));
                }
            }
            out(v)
        }
        MlOperator::LabelEncoder { mapping, default } => {
            let e = x.first().ok_or_else(|| Ml2SqlError::CompilationFailed("LabelEncoder without input".into()))?;
            let otherwise = SqlExpr::num(*default as f64);
            if mapping.is_empty() {
                return out(vec![otherwise]);
            }
            let whens = mapping
                .iter()
                .map(|(k, code)| (SqlExpr::cmp(CmpOp::Eq, e.clone(), literal(k)), SqlExpr::num(*code as f64)))
                .collect();
            out(vec![SqlExpr::Case {
                whens,
                otherwise: Box::new(otherwise),
            }])
        }
        MlOperator::Concat { .. } => out(x.to_vec()),
        MlOperator::FeatureExtractor { indices } => out(indices
            .iter()
            .map(|&i| {
                x.get(i)
                    .cloned()
                    .ok_or_else(|| Ml2SqlError::CompilationFailed(format!("FeatureExtractor index {i}")))
            })
            .collect::<Result<_, _>>()?),
        MlOperator::Constant { values } => out(values.iter().map(literal).collect()),
        MlOperator::LinearModel { .. } | MlOperator::TreeEnsemble { .. } => {
            let (label, score) = model_outputs(op, model_base(op, x)?);
            Ok(vec![(OutPort::Label, vec![label]), (OutPort::Score, vec![score])])
        }
    }
}

/// The expression both model outputs are derived from: the score for
/// linear models and summing ensembles, the vote count for voting ones.
fn model_base(op: &MlOperator, x: &[SqlExpr]) -> Result<SqlExpr, Ml2SqlError> {
    match op {
        MlOperator::LinearModel {
            weights,
            intercepts,
            post: p,
        } => {
            let terms = x
                .iter()
                .zip(weights)
                .filter(|(_, w)| w[0] != 0.0)
                .map(|(e, w)| {
                    if w[0] == 1.0 {
                        e.clone()
                    } else {
                        SqlExpr::bin(BinOp::Mul, e.clone(), SqlExpr::num(w[0]))
                    }
                })
                .collect();
            let mut z = sum(terms);
            if intercepts[0] != 0.0 {
                z = SqlExpr::bin(BinOp::Add, z, SqlExpr::num(intercepts[0]));
            }
            Ok(post(*p, z))
        }
        MlOperator::TreeEnsemble {
            trees,
            aggregate,
            post: p,
            ..
        } => {
            if *aggregate == Aggregate::Vote {
                if trees.iter().any(|t| t.leaves().iter().any(|l| t.leaf_value(*l).len() != 2)) {
                    return Err(Ml2SqlError::CompilationFailed("vote leaves must hold two values".into()));
                }
                return Ok(sum(trees
                    .iter()
                    .map(|t| compile_tree_with(t, x, &|v| SqlExpr::num(if v[1] > v[0] { 1.0 } else { 0.0 })))
                    .collect()));
            }
            let mut s = sum(trees.iter().map(|t| compile_tree(t, x)).collect());
            if *aggregate == Aggregate::Average && trees.len() > 1 {
                s = SqlExpr::bin(BinOp::Div, s, SqlExpr::num(trees.len() as f64));
            }
            Ok(post(*p, s))
        }
        other => Err(Ml2SqlError::CompilationFailed(format!("{} is not a model", other.kind()))),
    }
}

/// (label, score) in terms of the model base expression.
fn model_outputs(op: &MlOperator, base: SqlExpr) -> (SqlExpr, SqlExpr) {
    match op {
        MlOperator::TreeEnsemble {
            trees,
            aggregate: Aggregate::Vote,
            ..
        } => {
            let n = trees.len() as f64;
            let label = SqlExpr::if_else(
                SqlExpr::cmp(CmpOp::Gt, base.clone(), SqlExpr::bin(BinOp::Sub, SqlExpr::num(n), base.clone())),
                SqlExpr::num(1.0),
                SqlExpr::num(0.0),
            );
            let score = if trees.len() > 1 {
                SqlExpr::bin(BinOp::Div, base, SqlExpr::num(n))
            } else {
                base
            };
            (label, score)
        }
        MlOperator::TreeEnsemble {
            task: Task::Regression, ..
        } => (base.clone(), base),
        _ if op.is_classifier() => (threshold(base.clone()), base),
        _ => (base.clone(), base),
    }
}

/// Replaces column references to placeholders with their definitions.
fn substitute(e: &SqlExpr, defs: &BTreeMap<String, SqlExpr>) -> SqlExpr {
    match e {
        SqlExpr::Column(c) => match defs.get(c) {
            Some(d) => d.clone(),
            None => e.clone(),
        },
        SqlExpr::Indexed { .. } | SqlExpr::Number(_) | SqlExpr::Str(_) => e.clone(),
        SqlExpr::Binary { op, lhs, rhs } => SqlExpr::bin(*op, substitute(lhs, defs), substitute(rhs, defs)),
        SqlExpr::Neg(x) => SqlExpr::Neg(Box::new(substitute(x, defs))),
        SqlExpr::Cmp { op, lhs, rhs } => SqlExpr::cmp(*op, substitute(lhs, defs), substitute(rhs, defs)),
        SqlExpr::And(v) => SqlExpr::And(v.iter().map(|x| substitute(x, defs)).collect()),
        SqlExpr::Case { whens, otherwise } => SqlExpr::Case {
            whens: whens
                .iter()
                .map(|(c, v)| (substitute(c, defs), substitute(v, defs)))
                .collect(),
            otherwise: Box::new(substitute(otherwise, defs)),
        },
        SqlExpr::Func { func, args } => SqlExpr::func(*func, args.iter().map(|x| substitute(x, defs)).collect()),
    }
}

fn count_refs(e: &SqlExpr, names: &BTreeMap<String, SqlExpr>, counts: &mut BTreeMap<String, usize>) {
    if let SqlExpr::Column(c) = e {
        if let Some(def) = names.get(c) {
            let n = counts.entry(c.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                count_refs(def, names, counts);
            }
        }
    }
    e.visit_children(&mut |x| count_refs(x, names, counts));
}

/// A name prefix no input column starts with.
fn fresh_prefix(taken: &[String]) -> String {
    let mut p = "ml_".to_string();
    while taken.iter().any(|t| t.starts_with(&p)) {
        p.insert(0, '_');
    }
    p
}

/// Compiles a whole pipeline, or fails without partial output. Inputs are
/// referenced as columns named like the pipeline inputs. Non-trivial
/// expressions used more than once become named bindings.
pub fn compile_pipeline_to_sql(p: &ModelPipeline, cfg: &Ml2SqlConfig) -> Result<CompiledPipeline, Ml2SqlError> {
    compile_with_names(p, cfg, &[])
}

fn compile_with_names(p: &ModelPipeline, cfg: &Ml2SqlConfig, taken: &[String]) -> Result<CompiledPipeline, Ml2SqlError> {
    let mut reserved: Vec<String> = p.inputs.iter().map(|i| i.name.clone()).collect();
    reserved.extend(taken.iter().cloned());
    let prefix = fresh_prefix(&reserved);
    let order = topo_nodes(p).map_err(|stuck| Ml2SqlError::CompilationFailed(format!("cycle through {stuck:?}")))?;
    let mut defs: Vec<(String, SqlExpr)> = Vec::new();
    let mut outputs: BTreeMap<(String, OutPort), Vec<SqlExpr>> = BTreeMap::new();
    for idx in order {
        let node = &p.nodes[idx];
        if cfg.unsupported.contains(&node.op.kind()) {
            return Err(Ml2SqlError::CompilationFailed(format!(
                "node '{}' ({} is unsupported by the target)",
                node.id,
                node.op.kind().name()
            )));
        }
        let mut x = Vec::new();
        for src in p.node_inputs(&node.id) {
            match &src {
                Source::Input { input } => x.push(SqlExpr::col(input.clone())),
                Source::Node { node: from, port } => x.extend(
                    outputs
                        .get(&(from.clone(), *port))
                        .ok_or_else(|| Ml2SqlError::CompilationFailed(format!("'{}' reads missing {src}", node.id)))?
                        .iter()
                        .cloned(),
                ),
            }
        }
        let name = |e: SqlExpr, defs: &mut Vec<(String, SqlExpr)>| {
            if e.is_trivial() {
                return e;
            }
            let n = format!("{prefix}{}", defs.len() + 1);
            defs.push((n.clone(), e));
            SqlExpr::col(n)
        };
        let fail = |e: Ml2SqlError| Ml2SqlError::CompilationFailed(format!("node '{}': {e}", node.id));
        let ports = if node.op.is_model() {
            let base = name(model_base(&node.op, &x).map_err(fail)?, &mut defs);
            let (label, score) = model_outputs(&node.op, base);
            let label = name(label, &mut defs);
            let score = name(score, &mut defs);
            vec![(OutPort::Label, vec![label]), (OutPort::Score, vec![score])]
        } else {
            let mut ports = compile_operator(&node.op, &x).map_err(fail)?;
            for (_, v) in ports.iter_mut() {
                *v = v.drain(..).map(|e| name(e, &mut defs)).collect();
            }
            ports
        };
        for (port, v) in ports {
            outputs.insert((node.id.clone(), port), v);
        }
    }
    let fetch = |src: &Source| -> Result<SqlExpr, Ml2SqlError> {
        match src {
            Source::Node { node, port } => outputs
                .get(&(node.clone(), *port))
                .and_then(|v| v.first().cloned())
                .ok_or_else(|| Ml2SqlError::CompilationFailed(format!("missing output {src}"))),
            Source::Input { input } => Ok(SqlExpr::col(input.clone())),
        }
    };
    let label = fetch(&p.outputs.label)?;
    let score = p.outputs.score.as_ref().map(fetch).transpose()?;

    let names: BTreeMap<String, SqlExpr> = defs.iter().cloned().collect();
    let mut counts = BTreeMap::new();
    count_refs(&label, &names, &mut counts);
    if let Some(s) = &score {
        count_refs(s, &names, &mut counts);
    }
    // Inline single-use definitions, in definition order so each body only
    // refers to already-resolved names.
    let mut inline: BTreeMap<String, SqlExpr> = BTreeMap::new();
    let mut bindings = Vec::new();
    for (n, e) in &defs {
        let Some(&c) = counts.get(n) else { continue };
        let body = substitute(e, &inline);
        if c >= 2 {
            bindings.push((n.clone(), body));
        } else {
            inline.insert(n.clone(), body);
        }
    }
    Ok(CompiledPipeline {
        bindings,
        label: substitute(&label, &inline),
        score: score.map(|s| substitute(&s, &inline)),
    })
}

/// Replaces the plan's ML nodes by one `Compute` node that evaluates the
/// compiled expressions over the relation feeding the PREDICT boundary.
pub fn compile_plan_to_sql(plan: &Plan, cfg: &Ml2SqlConfig) -> Result<Plan, Ml2SqlError> {
    let Some(b) = plan.boundary() else {
        return Ok(plan.clone());
    };
    if let Some(id) = plan.find(|op| matches!(op, PlanOp::Tensor(_))) {
        return Err(Ml2SqlError::CompilationFailed(format!("{id} is a tensor program")));
    }
    let seg = plan
        .ml_segment()
        .ok_or_else(|| Ml2SqlError::CompilationFailed("plan has no model segment".into()))?;
    let mut taken: Vec<String> = Vec::new();
    if let Ok(s) = plan.schemas() {
        for sch in s.values() {
            if let Some(fields) = sch.fields() {
                taken.extend(fields.iter().map(|f| f.name.clone()));
            }
        }
    }
    let compiled = compile_with_names(&seg, cfg, &taken)?;
    let bnode = plan.node(b).clone();
    let PlanOp::PredictBoundary { outputs } = &bnode.op else {
        unreachable!()
    };
    let mut bindings: Vec<Binding> = compiled
        .bindings
        .iter()
        .map(|(n, e)| Binding {
            name: n.clone(),
            expr: e.clone(),
            dtype: DType::Float64,
        })
        .collect();
    for o in outputs {
        let expr = match o.port {
            OutPort::Score => compiled
                .score
                .clone()
                .ok_or_else(|| Ml2SqlError::CompilationFailed(format!("no score for '{}'", o.name)))?,
            _ => compiled.label.clone(),
        };
        bindings.push(Binding {
            name: o.name.clone(),
            expr,
            dtype: DType::Float64,
        });
    }
    let mut out = plan.clone();
    let node = out.node_mut(b);
    node.op = PlanOp::Compute { bindings };
    node.inputs = vec![PortRef::out(bnode.inputs[0].node)];
    node.label = Some("compiled model".into());
    out.gc();
    out.column_map.clear();
    out.validate()
        .map_err(|e| Ml2SqlError::CompilationFailed(format!("compiled plan is invalid: {e}")))?;
    Ok(out)
}
