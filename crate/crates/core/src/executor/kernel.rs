//! Direct, row-wise semantics of every ML operator. This is the reference the
//! SQL and tensor backends are compared against, so summation order is fixed:
//! dot products accumulate left to right starting from the first term, tree
//! ensembles add trees in order, intercepts are added last.

use std::collections::HashMap;

use super::table::{ColumnData, Table};
use crate::pipeline::{
    topo_nodes, Aggregate, MlOperator, ModelPipeline, Norm, OutPort, PostTransform, Source, Task,
};
use crate::value::Value;

pub const DEFAULT_CHUNK_ROWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct EvalError(pub String);

/// Label and (optional) score column produced by a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<f64>,
    pub scores: Option<Vec<f64>>,
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn apply_post(post: PostTransform, z: f64) -> f64 {
    match post {
        PostTransform::None => z,
        PostTransform::Logistic => logistic(z),
    }
}

fn threshold_label(score: f64) -> f64 {
    if score >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// `x0*w0 + x1*w1 + ... + b`, accumulated left to right.
pub fn linear_raw(row: impl Fn(usize) -> f64, weights: &[Vec<f64>], intercept: f64) -> f64 {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let term = row(i) * w[0];
        acc = if i == 0 { term } else { acc + term };
    }
    acc + intercept
}

/// Score of a sum/average ensemble before the post transform.
pub fn ensemble_raw(
    trees: &[crate::pipeline::DecisionTree],
    aggregate: Aggregate,
    row: impl Fn(usize) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for (i, t) in trees.iter().enumerate() {
        let v = t.leaf_value(t.leaf_index(&row))[0];
        acc = if i == 0 { v } else { acc + v };
    }
    if aggregate == Aggregate::Average && trees.len() > 1 {
        acc / trees.len() as f64
    } else {
        acc
    }
}

/// Number of trees voting for class 1 (leaf value for class 1 strictly greater).
pub fn ensemble_votes(trees: &[crate::pipeline::DecisionTree], row: impl Fn(usize) -> f64) -> f64 {
    let mut votes = 0.0;
    for t in trees {
        let v = t.leaf_value(t.leaf_index(&row));
        if v[1] > v[0] {
            votes += 1.0;
        }
    }
    votes
}

fn numeric(inputs: &[&ColumnData], what: &str) -> Result<Vec<Vec<f64>>, EvalError> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.to_f64()
                .ok_or_else(|| EvalError(format!("{what} input position {i} is not numeric")))
        })
        .collect()
}

/// Evaluates one operator over `rows` rows. `inputs` holds one column per
/// input position (all ports concatenated). Returns the columns of each
/// output port.
pub fn eval_operator(
    op: &MlOperator,
    inputs: &[&ColumnData],
    rows: usize,
) -> Result<Vec<(OutPort, Vec<ColumnData>)>, EvalError> {
    let out = |cols: Vec<ColumnData>| Ok(vec![(OutPort::Out, cols)]);
    match op {
        MlOperator::Scaler { offsets, scales } => {
            if offsets.len() != inputs.len() {
                return Err(EvalError("Scaler width mismatch".into()));
            }
            let xs = numeric(inputs, "Scaler")?;
            out(xs
                .into_iter()
                .enumerate()
                .map(|(j, col)| {
                    ColumnData::Float(col.iter().map(|x| (x - offsets[j]) * scales[j]).collect())
                })
                .collect())
        }
        MlOperator::Normalizer { norm } => {
            let xs = numeric(inputs, "Normalizer")?;
            let mut cols = vec![Vec::with_capacity(rows); xs.len()];
            for r in 0..rows {
                let n = match norm {
                    Norm::L1 => xs.iter().fold(0.0, |acc, c| acc + c[r].abs()),
                    Norm::L2 => xs.iter().fold(0.0, |acc, c| acc + c[r] * c[r]).sqrt(),
                    Norm::Max => xs.iter().fold(0.0, |acc: f64, c| acc.max(c[r].abs())),
                };
                for (j, c) in xs.iter().enumerate() {
                    cols[j].push(if n == 0.0 { c[r] } else { c[r] / n });
                }
            }
            out(cols.into_iter().map(ColumnData::Float).collect())
        }
        MlOperator::OneHotEncoder { categories } => {
            if categories.len() != inputs.len() {
                return Err(EvalError("OneHotEncoder width mismatch".into()));
            }
            let mut cols = Vec::new();
            for (col, cats) in inputs.iter().zip(categories) {
                for cat in cats {
                    cols.push(ColumnData::Float(
                        (0..rows)
                            .map(|r| if col.get(r).matches(cat) { 1.0 } else { 0.0 })
                            .collect(),
                    ));
                }
            }
            out(cols)
        }
        MlOperator::LabelEncoder { mapping, default } => {
            let [col] = inputs else {
                return Err(EvalError("LabelEncoder expects one input".into()));
            };
            let codes = (0..rows)
                .map(|r| {
                    let v = col.get(r);
                    mapping
                        .iter()
                        .find(|(k, _)| k.matches(&v))
                        .map_or(*default, |(_, code)| *code) as f64
                })
                .collect();
            out(vec![ColumnData::Float(codes)])
        }
        MlOperator::Concat { .. } => out(inputs.iter().map(|c| (*c).clone()).collect()),
        MlOperator::FeatureExtractor { indices } => {
            let mut cols = Vec::with_capacity(indices.len());
            for &i in indices {
                let c = inputs
                    .get(i)
                    .ok_or_else(|| EvalError(format!("FeatureExtractor index {i} out of range")))?;
                cols.push((*c).clone());
            }
            out(cols)
        }
        MlOperator::Constant { values } => {
            out(values.iter().map(|v| ColumnData::broadcast(v, rows)).collect())
        }
        MlOperator::LinearModel {
            weights,
            intercepts,
            post,
        } => {
            if weights.len() != inputs.len() {
                return Err(EvalError("LinearModel width mismatch".into()));
            }
            let xs = numeric(inputs, "LinearModel")?;
            let mut scores = Vec::with_capacity(rows);
            for r in 0..rows {
                scores.push(apply_post(*post, linear_raw(|i| xs[i][r], weights, intercepts[0])));
            }
            let labels = if op.is_classifier() {
                scores.iter().map(|s| threshold_label(*s)).collect()
            } else {
                scores.clone()
            };
            Ok(vec![
                (OutPort::Label, vec![ColumnData::Float(labels)]),
                (OutPort::Score, vec![ColumnData::Float(scores)]),
            ])
        }
        MlOperator::TreeEnsemble {
            trees,
            aggregate,
            task,
            post,
        } => {
            let xs = numeric(inputs, "TreeEnsemble")?;
            let mut labels = Vec::with_capacity(rows);
            let mut scores = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = |f: usize| xs[f][r];
                if *aggregate == Aggregate::Vote {
                    let votes = ensemble_votes(trees, row);
                    let n = trees.len() as f64;
                    labels.push(if votes > n - votes { 1.0 } else { 0.0 });
                    scores.push(votes / n);
                } else {
                    let s = apply_post(*post, ensemble_raw(trees, *aggregate, row));
                    labels.push(match task {
                        Task::BinaryClassification => threshold_label(s),
                        Task::Regression => s,
                    });
                    scores.push(s);
                }
            }
            Ok(vec![
                (OutPort::Label, vec![ColumnData::Float(labels)]),
                (OutPort::Score, vec![ColumnData::Float(scores)]),
            ])
        }
    }
}

/// Evaluates a pipeline over `batch`, whose columns are matched to pipeline
/// inputs by name and must carry the declared dtype.
pub fn evaluate_pipeline(p: &ModelPipeline, batch: &Table) -> Result<Predictions, EvalError> {
    evaluate_pipeline_chunked(p, batch, DEFAULT_CHUNK_ROWS)
}

pub fn evaluate_pipeline_chunked(
    p: &ModelPipeline,
    batch: &Table,
    chunk_rows: usize,
) -> Result<Predictions, EvalError> {
    let mut input_cols = Vec::with_capacity(p.inputs.len());
    for input in &p.inputs {
        let idx = batch
            .index_of(&input.name)
            .ok_or_else(|| EvalError(format!("batch has no column '{}'", input.name)))?;
        if batch.fields[idx].dtype != input.dtype {
            return Err(EvalError(format!(
                "column '{}' is {} but the pipeline expects {}",
                input.name, batch.fields[idx].dtype, input.dtype
            )));
        }
        input_cols.push(idx);
    }
    let order = topo_nodes(p).map_err(|stuck| EvalError(format!("cycle through {stuck:?}")))?;
    let chunk_rows = chunk_rows.max(1);
    let mut labels = Vec::with_capacity(batch.rows);
    let mut scores = p.outputs.score.as_ref().map(|_| Vec::with_capacity(batch.rows));
    let mut start = 0;
    while start < batch.rows || (start == 0 && batch.rows == 0) {
        let end = (start + chunk_rows).min(batch.rows);
        let chunk = batch.slice(start, end);
        let rows = end - start;
        let mut values: HashMap<(&str, OutPort), Vec<ColumnData>> = HashMap::new();
        for &idx in &order {
            let node = &p.nodes[idx];
            let mut inputs: Vec<&ColumnData> = Vec::new();
            let sources = p.node_inputs(&node.id);
            for src in &sources {
                match src {
                    Source::Input { input } => {
                        let pos = p.inputs.iter().position(|i| &i.name == input).ok_or_else(
                            || EvalError(format!("undeclared input '{input}'")),
                        )?;
                        inputs.push(&chunk.columns[input_cols[pos]]);
                    }
                    Source::Node { node: from, port } => {
                        let cols = values.get(&(from.as_str(), *port)).ok_or_else(|| {
                            EvalError(format!("node '{}' reads missing output {src}", node.id))
                        })?;
                        inputs.extend(cols.iter());
                    }
                }
            }
            let outs = eval_operator(&node.op, &inputs, rows)
                .map_err(|e| EvalError(format!("node '{}': {e}", node.id)))?;
            for (port, cols) in outs {
                values.insert((node.id.as_str(), port), cols);
            }
        }
        let fetch = |src: &Source| -> Result<Vec<f64>, EvalError> {
            let Source::Node { node, port } = src else {
                return Err(EvalError("pipeline output must reference a node".into()));
            };
            values
                .get(&(node.as_str(), *port))
                .and_then(|cols| cols.first())
                .and_then(ColumnData::to_f64)
                .ok_or_else(|| EvalError(format!("missing pipeline output {src}")))
        };
        labels.extend(fetch(&p.outputs.label)?);
        if let (Some(acc), Some(src)) = (scores.as_mut(), p.outputs.score.as_ref()) {
            acc.extend(fetch(src)?);
        }
        if batch.rows == 0 {
            break;
        }
        start = end;
    }
    Ok(Predictions { labels, scores })
}

/// Helper for building single-row batches in tests and examples.
pub fn row_table(cells: Vec<(&str, Value)>) -> Table {
    let fields = cells
        .iter()
        .map(|(n, v)| super::table::Field::new(*n, v.dtype()))
        .collect();
    let columns = cells.iter().map(|(_, v)| ColumnData::broadcast(v, 1)).collect();
    Table::from_parts(fields, columns).expect("single-row table")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pipeline::{Cmp, DecisionTree, PipelineBuilder};
    use crate::value::DType;

    fn covid_row(age: f64, bpm: f64, asthma: i64, gender: &str) -> Table {
        row_table(vec![
            ("age", Value::Float(age)),
            ("bpm", Value::Float(bpm)),
            ("asthma", Value::Int(asthma)),
            ("gender", Value::Str(gender.into())),
        ])
    }

    #[test]
    fn covid_tree_paths() {
        let p = fixtures::covid_pipeline();
        // asthma, over 60, male -> gender_F == 0 -> 1
        let r = evaluate_pipeline(&p, &covid_row(70.0, 80.0, 1, "M")).unwrap();
        assert_eq!(r.labels, vec![1.0]);
        // asthma, over 60, female -> 0
        let r = evaluate_pipeline(&p, &covid_row(70.0, 80.0, 1, "F")).unwrap();
        assert_eq!(r.labels, vec![0.0]);
        // asthma, 60 or under, male -> gender_M == 1 -> 1
        let r = evaluate_pipeline(&p, &covid_row(60.0, 80.0, 1, "M")).unwrap();
        assert_eq!(r.labels, vec![1.0]);
        // no asthma, bpm 95 -> scaled 2.5 > 2 -> 1
        let r = evaluate_pipeline(&p, &covid_row(30.0, 95.0, 0, "F")).unwrap();
        assert_eq!(r.labels, vec![1.0]);
        // no asthma, bpm 80 -> not_asthma == 1 -> 0
        let r = evaluate_pipeline(&p, &covid_row(30.0, 80.0, 0, "F")).unwrap();
        assert_eq!(r.labels, vec![0.0]);
    }

    #[test]
    fn identity_pipeline_scores_equal_input() {
        let p = PipelineBuilder::new("id")
            .input("x", DType::Float64)
            .node(
                "s",
                MlOperator::Scaler {
                    offsets: vec![0.0],
                    scales: vec![1.0],
                },
                vec![Source::input("x")],
            )
            .node(
                "m",
                MlOperator::LinearModel {
                    weights: vec![vec![1.0]],
                    intercepts: vec![0.0],
                    post: PostTransform::None,
                },
                vec![Source::node("s")],
            )
            .model_outputs("m")
            .build();
        let xs = vec![1.5, -2.0, 0.25, 1e10];
        let t = Table::new(vec![("x", DType::Float64)], vec![ColumnData::Float(xs.clone())]).unwrap();
        let r = evaluate_pipeline(&p, &t).unwrap();
        assert_eq!(r.scores.unwrap(), xs);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let p = fixtures::covid_pipeline();
        let n = 37;
        let t = Table::new(
            vec![
                ("age", DType::Float64),
                ("bpm", DType::Float64),
                ("asthma", DType::Int64),
                ("gender", DType::String),
            ],
            vec![
                ColumnData::Float((0..n).map(|i| 40.0 + i as f64).collect()),
                ColumnData::Float((0..n).map(|i| 70.0 + i as f64).collect()),
                ColumnData::Int((0..n).map(|i| i % 2).collect()),
                ColumnData::Str((0..n).map(|i| if i % 3 == 0 { "F" } else { "M" }.into()).collect()),
            ],
        )
        .unwrap();
        let whole = evaluate_pipeline(&p, &t).unwrap();
        for chunk in [1, 5, 36, 100] {
            assert_eq!(evaluate_pipeline_chunked(&p, &t, chunk).unwrap(), whole);
        }
    }

    #[test]
    fn dtype_mismatch_is_an_eval_error() {
        let p = fixtures::covid_pipeline();
        let t = row_table(vec![
            ("age", Value::Int(70)),
            ("bpm", Value::Float(1.0)),
            ("asthma", Value::Int(1)),
            ("gender", Value::Str("M".into())),
        ]);
        assert!(evaluate_pipeline(&p, &t).is_err());
    }

    #[test]
    fn vote_ties_go_to_class_zero() {
        let stump = |yes: bool| {
            DecisionTree::split(
                0,
                Cmp::Gt,
                0.0,
                DecisionTree::leaf(if yes { vec![0.0, 1.0] } else { vec![1.0, 0.0] }),
                DecisionTree::leaf(vec![1.0, 0.0]),
            )
        };
        let op = MlOperator::TreeEnsemble {
            trees: vec![stump(true), stump(false)],
            aggregate: Aggregate::Vote,
            task: Task::BinaryClassification,
            post: PostTransform::None,
        };
        let x = ColumnData::Float(vec![1.0]);
        let out = eval_operator(&op, &[&x], 1).unwrap();
        assert_eq!(out[0].1[0], ColumnData::Float(vec![0.0]));
        assert_eq!(out[1].1[0], ColumnData::Float(vec![0.5]));
    }

    #[test]
    fn normalizer_leaves_zero_rows_alone() {
        let a = ColumnData::Float(vec![3.0, 0.0]);
        let b = ColumnData::Float(vec![-4.0, 0.0]);
        let out = eval_operator(&MlOperator::Normalizer { norm: Norm::L2 }, &[&a, &b], 2).unwrap();
        assert_eq!(out[0].1[0], ColumnData::Float(vec![0.6, 0.0]));
        assert_eq!(out[0].1[1], ColumnData::Float(vec![-0.8, 0.0]));
    }
}
