//! Compiles linear models and tree ensembles into straight-line dense tensor
//! programs, plus a reference interpreter for them.
//!
//! Trees use the GEMM encoding: `X·A` gathers the tested feature of every
//! internal node, a per-column comparison yields the node outcomes `T`,
//! `T·C` (with `C` holding +1/-1 for leaves under the true/false branch)
//! equals the number of true-branch edges `D` exactly for the reached leaf,
//! and `onehot·E` picks the leaf value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::{Plan, PlanOp};
use crate::pipeline::{Aggregate, Cmp, DecisionTree, MlOperator, PostTransform, Task, TreeNode};

/// Dense row-major 2-D tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: [rows, cols],
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            shape: [rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.shape[1];
        Tensor {
            shape: [end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Ml2DnnError {
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TensorOp {
    /// `out = a · b`; `b` must not depend on the batch.
    Matmul { out: String, a: String, b: String },
    /// Elementwise `a + b`; `b` may be a single row broadcast over `a`.
    Add { out: String, a: String, b: String },
    /// Column `j` becomes `1` where `input[:, j] cmp[j] thresholds[j]`, else `0`.
    Compare {
        out: String,
        input: String,
        cmp: Vec<Cmp>,
        thresholds: Vec<f64>,
    },
    /// Selects one column.
    Gather { out: String, input: String, column: usize },
    Div { out: String, input: String, divisor: f64 },
    Sigmoid { out: String, input: String },
    /// Index of the largest column per row; the lowest index wins ties.
    Argmax { out: String, input: String },
}

impl TensorOp {
    pub fn out(&self) -> &str {
        match self {
            TensorOp::Matmul { out, .. }
            | TensorOp::Add { out, .. }
            | TensorOp::Compare { out, .. }
            | TensorOp::Gather { out, .. }
            | TensorOp::Div { out, .. }
            | TensorOp::Sigmoid { out, .. }
            | TensorOp::Argmax { out, .. } => out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorProgram {
    /// Width of the input tensor `X` (batch x n_features).
    pub n_features: usize,
    pub constants: BTreeMap<String, Tensor>,
    pub ops: Vec<TensorOp>,
    pub label: String,
    pub score: String,
}

pub const INPUT: &str = "X";

/// Row count of a tensor during static checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rows {
    Batch,
    Fixed(usize),
}

impl TensorProgram {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes") + "\n"
    }

    /// Checks every op's operand shapes; returns the output shapes.
    pub fn check(&self) -> Result<(), ShapeError> {
        let mut shapes: BTreeMap<&str, (Rows, usize)> = BTreeMap::new();
        shapes.insert(INPUT, (Rows::Batch, self.n_features));
        for (name, t) in &self.constants {
            if t.data.len() != t.shape[0] * t.shape[1] {
                return Err(ShapeError(format!("constant {name} has the wrong length")));
            }
            shapes.insert(name, (Rows::Fixed(t.shape[0]), t.shape[1]));
        }
        let get = |shapes: &BTreeMap<&str, (Rows, usize)>, n: &str| {
            shapes
                .get(n)
                .copied()
                .ok_or_else(|| ShapeError(format!("unknown tensor '{n}'")))
        };
        for op in &self.ops {
            let s = match op {
                TensorOp::Matmul { a, b, .. } => {
                    let (ra, ca) = get(&shapes, a)?;
                    let (rb, cb) = get(&shapes, b)?;
                    if rb != Rows::Fixed(ca) {
                        return Err(ShapeError(format!("MATMUL {a} x {b}: inner dims differ")));
                    }
                    (ra, cb)
                }
                TensorOp::Add { a, b, .. } => {
                    let (ra, ca) = get(&shapes, a)?;
                    let (rb, cb) = get(&shapes, b)?;
                    if cb != ca || !(rb == ra || rb == Rows::Fixed(1)) {
                        return Err(ShapeError(format!("ADD {a} + {b}: shapes differ")));
                    }
                    (ra, ca)
                }
                TensorOp::Compare {
                    input,
                    cmp,
                    thresholds,
                    ..
                } => {
                    let (r, c) = get(&shapes, input)?;
                    if cmp.len() != c || thresholds.len() != c {
                        return Err(ShapeError(format!("COMPARE on {input}: {c} columns")));
                    }
                    (r, c)
                }
                TensorOp::Gather { input, column, .. } => {
                    let (r, c) = get(&shapes, input)?;
                    if *column >= c {
                        return Err(ShapeError(format!("GATHER column {column} of {c}")));
                    }
                    (r, 1)
                }
                TensorOp::Div { input, .. } | TensorOp::Sigmoid { input, .. } => get(&shapes, input)?,
                TensorOp::Argmax { input, .. } => {
                    let (r, c) = get(&shapes, input)?;
                    if c == 0 {
                        return Err(ShapeError("ARGMAX over zero columns".into()));
                    }
                    (r, 1)
                }
            };
            shapes.insert(op.out(), s);
        }
        for n in [&self.label, &self.score] {
            if get(&shapes, n)?.1 != 1 {
                return Err(ShapeError(format!("output {n} must have one column")));
            }
        }
        Ok(())
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            // Same accumulation order as the row-wise evaluator.
            let mut acc = 0.0;
            for kk in 0..k {
                let term = a.at(i, kk) * b.at(kk, j);
                acc = if kk == 0 { term } else { acc + term };
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Evaluates `p` on `batch` (rows x `n_features`) and returns (labels, scores).
pub fn run_program(p: &TensorProgram, batch: &Tensor) -> Result<(Vec<f64>, Vec<f64>), ShapeError> {
    if batch.cols() != p.n_features {
        return Err(ShapeError(format!(
            "batch has {} columns, program expects {}",
            batch.cols(),
            p.n_features
        )));
    }
    if batch.data.len() != batch.rows() * batch.cols() {
        return Err(ShapeError("batch data length does not match its shape".into()));
    }
    p.check()?;
    let mut env: BTreeMap<&str, Tensor> = BTreeMap::new();
    env.insert(INPUT, batch.clone());
    for (k, v) in &p.constants {
        env.insert(k, v.clone());
    }
    for op in &p.ops {
        let t = match op {
            TensorOp::Matmul { a, b, .. } => matmul(&env[a.as_str()], &env[b.as_str()]),
            TensorOp::Add { a, b, .. } => {
                let (x, y) = (&env[a.as_str()], &env[b.as_str()]);
                let mut out = x.clone();
                for r in 0..x.rows() {
                    let yr = if y.rows() == 1 { 0 } else { r };
                    for c in 0..x.cols() {
                        out.set(r, c, x.at(r, c) + y.at(yr, c));
                    }
                }
                out
            }
            TensorOp::Compare {
                input,
                cmp,
                thresholds,
                ..
            } => {
                let x = &env[input.as_str()];
                let mut out = x.clone();
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        out.set(r, c, if cmp[c].eval(x.at(r, c), thresholds[c]) { 1.0 } else { 0.0 });
                    }
                }
                out
            }
            TensorOp::Gather { input, column, .. } => {
                let x = &env[input.as_str()];
                Tensor {
                    shape: [x.rows(), 1],
                    data: (0..x.rows()).map(|r| x.at(r, *column)).collect(),
                }
            }
            TensorOp::Div { input, divisor, .. } => {
                let x = &env[input.as_str()];
                Tensor {
                    shape: x.shape,
                    data: x.data.iter().map(|v| v / divisor).collect(),
                }
            }
            TensorOp::Sigmoid { input, .. } => {
                let x = &env[input.as_str()];
                Tensor {
                    shape: x.shape,
                    data: x.data.iter().map(|v| crate::executor::logistic(*v)).collect(),
                }
            }
            TensorOp::Argmax { input, .. } => {
                let x = &env[input.as_str()];
                let data = (0..x.rows())
                    .map(|r| {
                        let mut best = 0;
                        for c in 1..x.cols() {
                            if x.at(r, c) > x.at(r, best) {
                                best = c;
                            }
                        }
                        best as f64
                    })
                    .collect();
                Tensor {
                    shape: [x.rows(), 1],
                    data,
                }
            }
        };
        env.insert(op.out(), t);
    }
    Ok((env[p.label.as_str()].data.clone(), env[p.score.as_str()].data.clone()))
}

struct Builder {
    constants: BTreeMap<String, Tensor>,
    ops: Vec<TensorOp>,
    next: usize,
}

impl Builder {
    fn new() -> Self {
        Builder {
            constants: BTreeMap::new(),
            ops: Vec::new(),
            next: 0,
        }
    }

    fn name(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn constant(&mut self, prefix: &str, t: Tensor) -> String {
        let n = self.name(prefix);
        self.constants.insert(n.clone(), t);
        n
    }

    fn push(&mut self, prefix: &str, make: impl FnOnce(String) -> TensorOp) -> String {
        let n = self.name(prefix);
        self.ops.push(make(n.clone()));
        n
    }

    fn finish(self, n_features: usize, label: String, score: String) -> Result<TensorProgram, Ml2DnnError> {
        let p = TensorProgram {
            n_features,
            constants: self.constants,
            ops: self.ops,
            label,
            score,
        };
        p.check()?;
        Ok(p)
    }
}

/// Emits the ops computing one tree's leaf vector (batch x leaf width).
fn tree_ops(b: &mut Builder, tree: &DecisionTree, n_features: usize, leaf_row: impl Fn(&[f64]) -> Vec<f64>) -> String {
    let mut internals: Vec<usize> = Vec::new();
    let mut leaves: Vec<usize> = Vec::new();
    tree.visit_dfs(0, &mut |i, n| match n {
        TreeNode::Internal { .. } => internals.push(i),
        TreeNode::Leaf { .. } => leaves.push(i),
    });
    let pos_internal = |i: usize| internals.iter().position(|&x| x == i).expect("internal");
    let pos_leaf = |i: usize| leaves.iter().position(|&x| x == i).expect("leaf");
    let (ni, nl) = (internals.len(), leaves.len());

    let mut select = Tensor::zeros(n_features, ni);
    let mut cmps = Vec::with_capacity(ni);
    let mut thresholds = Vec::with_capacity(ni);
    let mut paths = Tensor::zeros(ni, nl);
    let mut true_edges = vec![0.0; nl];
    for (j, &i) in internals.iter().enumerate() {
        let TreeNode::Internal {
            feature,
            cmp,
            threshold,
            true_child,
            false_child,
        } = &tree.nodes[i]
        else {
            unreachable!()
        };
        select.set(*feature, j, 1.0);
        cmps.push(*cmp);
        thresholds.push(*threshold);
        for (child, sign) in [(*true_child, 1.0), (*false_child, -1.0)] {
            tree.visit_dfs(child, &mut |k, n| {
                if matches!(n, TreeNode::Leaf { .. }) {
                    paths.set(j, pos_leaf(k), sign);
                }
            });
        }
    }
    for &l in &leaves {
        let mut count = 0.0;
        for &i in &internals {
            if let TreeNode::Internal { true_child, .. } = &tree.nodes[i] {
                let mut under = false;
                tree.visit_dfs(*true_child, &mut |k, _| under |= k == l);
                if under {
                    count += 1.0;
                }
            }
        }
        true_edges[pos_leaf(l)] = count;
    }
    let _ = pos_internal;
    let width = leaf_row(tree.leaf_value(leaves[0])).len();
    let mut values = Tensor::zeros(nl, width);
    for (k, &l) in leaves.iter().enumerate() {
        for (c, v) in leaf_row(tree.leaf_value(l)).into_iter().enumerate() {
            values.set(k, c, v);
        }
    }

    let a = b.constant("select", select);
    let c = b.constant("paths", paths);
    let e = b.constant("leaves", values);
    let tested = b.push("tested", |out| TensorOp::Matmul {
        out,
        a: INPUT.into(),
        b: a,
    });
    let outcomes = b.push("outcome", |out| TensorOp::Compare {
        out,
        input: tested,
        cmp: cmps,
        thresholds,
    });
    let hits = b.push("hits", |out| TensorOp::Matmul { out, a: outcomes, b: c });
    let onehot = b.push("reached", |out| TensorOp::Compare {
        out,
        input: hits,
        cmp: vec![Cmp::Eq; nl],
        thresholds: true_edges,
    });
    b.push("value", |out| TensorOp::Matmul { out, a: onehot, b: e })
}

/// Compiles a tree ensemble over `n_features` inputs.
pub fn compile_tree_to_tensors(op: &MlOperator, n_features: usize) -> Result<TensorProgram, Ml2DnnError> {
    let MlOperator::TreeEnsemble {
        trees,
        aggregate,
        task,
        post,
    } = op
    else {
        return Err(Ml2DnnError::UnsupportedModel(format!("{} is not a tree ensemble", op.kind())));
    };
    if trees.is_empty() {
        return Err(Ml2DnnError::UnsupportedModel("ensemble has no trees".into()));
    }
    if let Some(f) = trees.iter().flat_map(|t| t.used_features()).find(|f| *f >= n_features) {
        return Err(Ml2DnnError::UnsupportedModel(format!("tree tests feature {f} of {n_features}")));
    }
    let mut b = Builder::new();
    let n = trees.len() as f64;
    if *aggregate == Aggregate::Vote {
        if *task != Task::BinaryClassification {
            return Err(Ml2DnnError::UnsupportedModel("vote needs binary classification".into()));
        }
        let mut acc: Option<String> = None;
        for t in trees {
            let ok = t.leaves().iter().all(|l| t.leaf_value(*l).len() == 2);
            if !ok {
                return Err(Ml2DnnError::UnsupportedModel("vote leaves must hold two class values".into()));
            }
            let v = tree_ops(&mut b, t, n_features, |leaf| {
                if leaf[1] > leaf[0] {
                    vec![0.0, 1.0]
                } else {
                    vec![1.0, 0.0]
                }
            });
            acc = Some(match acc {
                None => v,
                Some(prev) => b.push("votes", |out| TensorOp::Add { out, a: prev, b: v }),
            });
        }
        let votes = acc.expect("at least one tree");
        let label = b.push("label", |out| TensorOp::Argmax {
            out,
            input: votes.clone(),
        });
        let positive = b.push("positive", |out| TensorOp::Gather {
            out,
            input: votes,
            column: 1,
        });
        let score = b.push("score", |out| TensorOp::Div {
            out,
            input: positive,
            divisor: n,
        });
        return b.finish(n_features, label, score);
    }
    let mut acc: Option<String> = None;
    for t in trees {
        let v = tree_ops(&mut b, t, n_features, |leaf| vec![leaf[0]]);
        acc = Some(match acc {
            None => v,
            Some(prev) => b.push("sum", |out| TensorOp::Add { out, a: prev, b: v }),
        });
    }
    let mut score = acc.expect("at least one tree");
    if *aggregate == Aggregate::Average && trees.len() > 1 {
        score = b.push("mean", |out| TensorOp::Div {
            out,
            input: score,
            divisor: n,
        });
    }
    finish_score(b, n_features, score, *post, *task == Task::BinaryClassification)
}

fn finish_score(
    mut b: Builder,
    n_features: usize,
    mut score: String,
    post: PostTransform,
    classify: bool,
) -> Result<TensorProgram, Ml2DnnError> {
    if post == PostTransform::Logistic {
        score = b.push("prob", |out| TensorOp::Sigmoid { out, input: score });
    }
    let label = if classify {
        b.push("label", |out| TensorOp::Compare {
            out,
            input: score.clone(),
            cmp: vec![Cmp::Ge],
            thresholds: vec![0.5],
        })
    } else {
        score.clone()
    };
    b.finish(n_features, label, score)
}

pub fn compile_linear_to_tensors(op: &MlOperator) -> Result<TensorProgram, Ml2DnnError> {
    let MlOperator::LinearModel {
        weights,
        intercepts,
        post,
    } = op
    else {
        return Err(Ml2DnnError::UnsupportedModel(format!("{} is not a linear model", op.kind())));
    };
    if intercepts.len() != 1 || weights.iter().any(|w| w.len() != 1) {
        return Err(Ml2DnnError::UnsupportedModel("multi-output linear model".into()));
    }
    let n = weights.len();
    let mut b = Builder::new();
    let w = b.constant("weights", Tensor::new(n, 1, weights.iter().map(|r| r[0]).collect())?);
    let bias = b.constant("intercept", Tensor::new(1, 1, vec![intercepts[0]])?);
    let z = b.push("dot", |out| TensorOp::Matmul {
        out,
        a: INPUT.into(),
        b: w,
    });
    let z = b.push("raw", |out| TensorOp::Add { out, a: z, b: bias });
    finish_score(b, n, z, *post, op.is_classifier())
}

/// Compiles one model operator given its input width.
pub fn compile_model(op: &MlOperator, n_features: usize) -> Result<TensorProgram, Ml2DnnError> {
    match op {
        MlOperator::TreeEnsemble { .. } => compile_tree_to_tensors(op, n_features),
        MlOperator::LinearModel { .. } => compile_linear_to_tensors(op),
        other => Err(Ml2DnnError::UnsupportedModel(format!(
            "{} is a featurizer; only models are tensorized",
            other.kind()
        ))),
    }
}

/// Replaces every model node of `plan` with its tensor program. Featurizers
/// stay as they are. All-or-nothing: on error the plan is untouched.
pub fn compile_plan_to_tensors(plan: &Plan) -> Result<Plan, Ml2DnnError> {
    let schemas = plan
        .schemas()
        .map_err(|e| Ml2DnnError::UnsupportedModel(format!("invalid plan: {e}")))?;
    let mut out = plan.clone();
    for id in plan.ml_nodes() {
        let n = plan.node(id);
        let PlanOp::Ml(op) = &n.op else { continue };
        if !op.is_model() {
            continue;
        }
        let mut width = 0;
        for r in &n.inputs {
            width += match (&r.port, &schemas[&r.node]) {
                (crate::ir::Port::Column(_), _) => 1,
                (p, s) => p.as_out_port().and_then(|p| s.port(p)).map_or(0, <[_]>::len),
            };
        }
        let prog = compile_model(op, width)?;
        out.node_mut(id).op = PlanOp::Tensor(prog);
    }
    out.validate()
        .map_err(|e| Ml2DnnError::UnsupportedModel(format!("tensorized plan is invalid: {e}")))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn stump() -> MlOperator {
        MlOperator::TreeEnsemble {
            trees: vec![DecisionTree::split(
                0,
                Cmp::Le,
                0.5,
                DecisionTree::leaf(vec![0.0]),
                DecisionTree::leaf(vec![1.0]),
            )],
            aggregate: Aggregate::Sum,
            task: Task::BinaryClassification,
            post: PostTransform::None,
        }
    }

    #[test]
    fn stump_agrees_with_traversal() {
        let p = compile_tree_to_tensors(&stump(), 1).unwrap();
        let xs = [-1.0, 0.0, 0.5, 0.5 + f64::EPSILON, 1.0];
        let (labels, scores) = run_program(&p, &Tensor::new(xs.len(), 1, xs.to_vec()).unwrap()).unwrap();
        let expect: Vec<f64> = xs.iter().map(|x| if *x <= 0.5 { 0.0 } else { 1.0 }).collect();
        assert_eq!(scores, expect);
        assert_eq!(labels, expect);
        let compares = p.ops.iter().filter(|o| matches!(o, TensorOp::Compare { .. })).count();
        assert_eq!(compares, 3);
    }

    #[test]
    fn covid_tree_on_grid() {
        let op = MlOperator::TreeEnsemble {
            trees: vec![fixtures::covid_tree()],
            aggregate: Aggregate::Average,
            task: Task::BinaryClassification,
            post: PostTransform::None,
        };
        let p = compile_tree_to_tensors(&op, 6).unwrap();
        let t = fixtures::covid_tree();
        let mut rows = Vec::new();
        for age in 0..10 {
            for bpm in 0..10 {
                for asthma in 0..2 {
                    for g in 0..2 {
                        rows.push([
                            30.0 + 6.0 * age as f64,
                            bpm as f64 * 0.5,
                            1.0 - asthma as f64,
                            asthma as f64,
                            g as f64,
                            1.0 - g as f64,
                        ]);
                    }
                }
            }
        }
        let batch = Tensor::new(rows.len(), 6, rows.iter().flatten().copied().collect()).unwrap();
        let (labels, _) = run_program(&p, &batch).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let v = t.leaf_value(t.leaf_index(|f| row[f]))[0];
            assert_eq!(labels[r], if v >= 0.5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn identical_stumps_average_to_one_stump() {
        let MlOperator::TreeEnsemble { trees, .. } = stump() else { unreachable!() };
        let two = MlOperator::TreeEnsemble {
            trees: vec![trees[0].clone(), trees[0].clone()],
            aggregate: Aggregate::Average,
            task: Task::Regression,
            post: PostTransform::None,
        };
        let one = compile_tree_to_tensors(&stump(), 1).unwrap();
        let two = compile_tree_to_tensors(&two, 1).unwrap();
        let batch = Tensor::new(4, 1, vec![0.0, 0.3, 0.7, 2.0]).unwrap();
        assert_eq!(run_program(&one, &batch).unwrap().1, run_program(&two, &batch).unwrap().1);
    }

    #[test]
    fn linear_models() {
        let id = MlOperator::LinearModel {
            weights: vec![vec![1.0]],
            intercepts: vec![0.0],
            post: PostTransform::None,
        };
        let p = compile_linear_to_tensors(&id).unwrap();
        let (_, s) = run_program(&p, &Tensor::new(3, 1, vec![-2.0, 0.0, 7.5]).unwrap()).unwrap();
        assert_eq!(s, vec![-2.0, 0.0, 7.5]);
        let sum = MlOperator::LinearModel {
            weights: vec![vec![1.0], vec![1.0]],
            intercepts: vec![0.0],
            post: PostTransform::None,
        };
        let p = compile_linear_to_tensors(&sum).unwrap();
        let (_, s) = run_program(&p, &Tensor::new(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(s, vec![3.0]);
    }

    #[test]
    fn empty_batch_and_bad_shape() {
        let p = compile_tree_to_tensors(&stump(), 1).unwrap();
        let (l, s) = run_program(&p, &Tensor::zeros(0, 1)).unwrap();
        assert!(l.is_empty() && s.is_empty());
        assert!(run_program(&p, &Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn featurizers_are_not_tensorized() {
        let op = MlOperator::Normalizer {
            norm: crate::pipeline::Norm::L2,
        };
        assert!(matches!(compile_model(&op, 2), Err(Ml2DnnError::UnsupportedModel(_))));
    }
}
