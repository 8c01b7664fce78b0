//! Trained-pipeline graph format: featurizers and models wired into a DAG.

mod format;
mod tree;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{format_number, DType, Value};

pub use format::{load_pipeline, save_pipeline, FORMAT_TAG};
pub use tree::{Cmp, DecisionTree, TreeNode};
pub use validate::{topo_nodes, validate, NodeTypes, ValidationIssue, ValidationReport};
pub(crate) use validate::validate_with_types;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    #[serde(rename = "MAX")]
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Sum,
    Average,
    Vote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BinaryClassification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostTransform {
    #[default]
    None,
    Logistic,
}

/// Default code emitted by a `LabelEncoder` for values missing from its mapping.
pub const LABEL_ENCODER_UNSEEN: i64 = -1;

fn unseen_default() -> i64 {
    LABEL_ENCODER_UNSEEN
}

/// One ML operator. Every operator except `Constant` consumes its input
/// ports concatenated into one feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum MlOperator {
    Scaler {
        offsets: Vec<f64>,
        scales: Vec<f64>,
    },
    Normalizer {
        norm: Norm,
    },
    /// One category list per input column; unseen values encode as all zeros.
    OneHotEncoder {
        categories: Vec<Vec<Value>>,
    },
    LabelEncoder {
        mapping: Vec<(Value, i64)>,
        #[serde(default = "unseen_default")]
        default: i64,
    },
    Concat {
        arity: usize,
    },
    FeatureExtractor {
        indices: Vec<usize>,
    },
    Constant {
        values: Vec<Value>,
    },
    /// `weights` is `n_features x n_classes`; only one output column is supported.
    LinearModel {
        weights: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
        #[serde(default)]
        post: PostTransform,
    },
    TreeEnsemble {
        trees: Vec<DecisionTree>,
        aggregate: Aggregate,
        task: Task,
        #[serde(default)]
        post: PostTransform,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Scaler,
    Normalizer,
    OneHotEncoder,
    LabelEncoder,
    Concat,
    FeatureExtractor,
    Constant,
    LinearModel,
    TreeEnsemble,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Scaler => "Scaler",
            OpKind::Normalizer => "Normalizer",
            OpKind::OneHotEncoder => "OneHotEncoder",
            OpKind::LabelEncoder => "LabelEncoder",
            OpKind::Concat => "Concat",
            OpKind::FeatureExtractor => "FeatureExtractor",
            OpKind::Constant => "Constant",
            OpKind::LinearModel => "LinearModel",
            OpKind::TreeEnsemble => "TreeEnsemble",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        [
            OpKind::Scaler,
            OpKind::Normalizer,
            OpKind::OneHotEncoder,
            OpKind::LabelEncoder,
            OpKind::Concat,
            OpKind::FeatureExtractor,
            OpKind::Constant,
            OpKind::LinearModel,
            OpKind::TreeEnsemble,
        ]
        .into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output port of a node. Models expose `label` and `score`, everything else `out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutPort {
    #[default]
    Out,
    Label,
    Score,
}

impl OutPort {
    pub fn is_default(&self) -> bool {
        *self == OutPort::Out
    }
}

impl fmt::Display for OutPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutPort::Out => "out",
            OutPort::Label => "label",
            OutPort::Score => "score",
        })
    }
}

impl MlOperator {
    pub fn kind(&self) -> OpKind {
        match self {
            MlOperator::Scaler { .. } => OpKind::Scaler,
            MlOperator::Normalizer { .. } => OpKind::Normalizer,
            MlOperator::OneHotEncoder { .. } => OpKind::OneHotEncoder,
            MlOperator::LabelEncoder { .. } => OpKind::LabelEncoder,
            MlOperator::Concat { .. } => OpKind::Concat,
            MlOperator::FeatureExtractor { .. } => OpKind::FeatureExtractor,
            MlOperator::Constant { .. } => OpKind::Constant,
            MlOperator::LinearModel { .. } => OpKind::LinearModel,
            MlOperator::TreeEnsemble { .. } => OpKind::TreeEnsemble,
        }
    }

    pub fn is_model(&self) -> bool {
        matches!(
            self,
            MlOperator::LinearModel { .. } | MlOperator::TreeEnsemble { .. }
        )
    }

    /// Whether the model's label is the thresholded score (`score >= 0.5`).
    /// Regression models report the score itself as the label.
    pub fn is_classifier(&self) -> bool {
        match self {
            MlOperator::LinearModel { post, .. } => *post == PostTransform::Logistic,
            MlOperator::TreeEnsemble { task, .. } => *task == Task::BinaryClassification,
            _ => false,
        }
    }

    pub fn output_ports(&self) -> &'static [OutPort] {
        if self.is_model() {
            &[OutPort::Label, OutPort::Score]
        } else {
            &[OutPort::Out]
        }
    }

    /// Computes the per-position dtypes of each output port from the
    /// concatenated input dtypes, or explains why the inputs do not fit.
    pub fn output_types(&self, input: &[DType]) -> Result<Vec<(OutPort, Vec<DType>)>, String> {
        let width = input.len();
        let numeric_input = || -> Result<(), String> {
            match input.iter().position(|d| !d.is_numeric()) {
                Some(i) => Err(format!("input position {i} is {} but must be numeric", input[i])),
                None => Ok(()),
            }
        };
        let floats = |n: usize| vec![DType::Float64; n];
        let out = match self {
            MlOperator::Scaler { offsets, scales } => {
                if offsets.len() != width || scales.len() != width {
                    return Err(format!(
                        "Scaler has {} offsets and {} scales for input width {width}",
                        offsets.len(),
                        scales.len()
                    ));
                }
                numeric_input()?;
                floats(width)
            }
            MlOperator::Normalizer { .. } => {
                numeric_input()?;
                floats(width)
            }
            MlOperator::OneHotEncoder { categories } => {
                if categories.len() != width {
                    return Err(format!(
                        "OneHotEncoder has {} category lists for input width {width}",
                        categories.len()
                    ));
                }
                for (col, (cats, dtype)) in categories.iter().zip(input).enumerate() {
                    if let Some(c) = cats.iter().find(|c| !c.compatible_with(*dtype)) {
                        return Err(format!(
                            "OneHotEncoder category {c} does not match column {col} dtype {dtype}"
                        ));
                    }
                }
                floats(categories.iter().map(Vec::len).sum())
            }
            MlOperator::LabelEncoder { mapping, .. } => {
                if width != 1 {
                    return Err(format!("LabelEncoder expects width 1, got {width}"));
                }
                if let Some((k, _)) = mapping.iter().find(|(k, _)| !k.compatible_with(input[0])) {
                    return Err(format!("LabelEncoder key {k} does not match dtype {}", input[0]));
                }
                floats(1)
            }
            MlOperator::Concat { .. } => input.to_vec(),
            MlOperator::FeatureExtractor { indices } => {
                let mut out = Vec::with_capacity(indices.len());
                for &i in indices {
                    out.push(*input.get(i).ok_or_else(|| {
                        format!("FeatureExtractor index {i} out of range for width {width}")
                    })?);
                }
                out
            }
            MlOperator::Constant { values } => values.iter().map(Value::dtype).collect(),
            MlOperator::LinearModel { weights, .. } => {
                if weights.len() != width {
                    return Err(format!(
                        "LinearModel has {} weight rows for input width {width}",
                        weights.len()
                    ));
                }
                numeric_input()?;
                return Ok(vec![(OutPort::Label, floats(1)), (OutPort::Score, floats(1))]);
            }
            MlOperator::TreeEnsemble { trees, .. } => {
                numeric_input()?;
                for (t, tree) in trees.iter().enumerate() {
                    if let Some(&f) = tree.used_features().iter().find(|&&f| f >= width) {
                        return Err(format!(
                            "tree {t} tests feature {f} but input width is {width}"
                        ));
                    }
                }
                return Ok(vec![(OutPort::Label, floats(1)), (OutPort::Score, floats(1))]);
            }
        };
        Ok(vec![(OutPort::Out, out)])
    }

    /// Parameter checks that do not depend on wiring.
    pub fn check_params(&self) -> Vec<String> {
        let mut issues = Vec::new();
        match self {
            MlOperator::Scaler { offsets, scales } => {
                if offsets.len() != scales.len() {
                    issues.push("offsets and scales differ in length".into());
                }
                if scales.iter().any(|s| !s.is_finite()) {
                    issues.push("non-finite scale".into());
                }
                if offsets.iter().any(|o| !o.is_finite()) {
                    issues.push("non-finite offset".into());
                }
            }
            MlOperator::OneHotEncoder { categories } => {
                for (col, cats) in categories.iter().enumerate() {
                    if cats.is_empty() {
                        issues.push(format!("empty category list for column {col}"));
                    }
                    for (i, c) in cats.iter().enumerate() {
                        if cats[..i].iter().any(|d| d.matches(c)) {
                            issues.push(format!("duplicate category {c} for column {col}"));
                        }
                        if c.as_f64().is_some_and(|v| !v.is_finite()) {
                            issues.push(format!("non-finite category for column {col}"));
                        }
                    }
                }
            }
            MlOperator::LabelEncoder { mapping, .. } => {
                for (i, (k, _)) in mapping.iter().enumerate() {
                    if mapping[..i].iter().any(|(j, _)| j.matches(k)) {
                        issues.push(format!("duplicate label key {k}"));
                    }
                }
            }
            MlOperator::Concat { arity } => {
                if *arity == 0 {
                    issues.push("Concat arity must be at least 1".into());
                }
            }
            MlOperator::FeatureExtractor { indices } => {
                for (i, x) in indices.iter().enumerate() {
                    if indices[..i].contains(x) {
                        issues.push(format!("duplicate feature index {x}"));
                    }
                }
            }
            MlOperator::Constant { values } => {
                if values.iter().any(|v| v.as_f64().is_some_and(|x| !x.is_finite())) {
                    issues.push("non-finite constant".into());
                }
            }
            MlOperator::LinearModel {
                weights,
                intercepts,
                ..
            } => {
                if intercepts.len() != 1 || weights.iter().any(|row| row.len() != 1) {
                    issues.push(
                        "only single-output linear models are supported (multi-class is not implemented)"
                            .into(),
                    );
                }
                if weights.iter().flatten().chain(intercepts).any(|w| !w.is_finite()) {
                    issues.push("non-finite weight or intercept".into());
                }
            }
            MlOperator::TreeEnsemble {
                trees,
                aggregate,
                task,
                post,
            } => {
                if trees.is_empty() {
                    issues.push("ensemble has no trees".into());
                }
                if *aggregate == Aggregate::Vote {
                    if *task != Task::BinaryClassification {
                        issues.push("vote aggregation requires binary_classification".into());
                    }
                    if *post != PostTransform::None {
                        issues.push("vote aggregation does not take a post transform".into());
                    }
                }
                let leaf_len = if *aggregate == Aggregate::Vote { 2 } else { 1 };
                for (t, tree) in trees.iter().enumerate() {
                    if let Err(e) = tree.check_shape() {
                        issues.push(format!("tree {t}: {e}"));
                        continue;
                    }
                    tree.visit_dfs(0, &mut |i, n| match n {
                        TreeNode::Leaf { value } => {
                            if value.len() != leaf_len {
                                issues.push(format!(
                                    "tree {t} leaf {i} has {} values, expected {leaf_len}",
                                    value.len()
                                ));
                            }
                            if value.iter().any(|v| !v.is_finite()) {
                                issues.push(format!("tree {t} leaf {i} is not finite"));
                            }
                        }
                        TreeNode::Internal { threshold, .. } => {
                            if !threshold.is_finite() {
                                issues.push(format!("tree {t} node {i} threshold is not finite"));
                            }
                        }
                    });
                }
            }
            MlOperator::Normalizer { .. } => {}
        }
        issues
    }

    /// Short single-line description used by explain output.
    pub fn describe(&self) -> String {
        let nums = |xs: &[f64]| xs.iter().map(|x| format_number(*x)).collect::<Vec<_>>().join(", ");
        match self {
            MlOperator::Scaler { offsets, scales } => {
                format!("Scaler(offsets=[{}], scales=[{}])", nums(offsets), nums(scales))
            }
            MlOperator::Normalizer { norm } => format!("Normalizer({norm:?})"),
            MlOperator::OneHotEncoder { categories } => {
                let cols: Vec<String> = categories
                    .iter()
                    .map(|c| {
                        format!(
                            "[{}]",
                            c.iter().map(Value::to_string).collect::<Vec<_>>().join(", ")
                        )
                    })
                    .collect();
                format!("OneHotEncoder({})", cols.join(", "))
            }
            MlOperator::LabelEncoder { mapping, default } => {
                let m: Vec<String> = mapping.iter().map(|(k, v)| format!("{k}->{v}")).collect();
                format!("LabelEncoder({}, default={default})", m.join(", "))
            }
            MlOperator::Concat { arity } => format!("Concat({arity})"),
            MlOperator::FeatureExtractor { indices } => format!("FeatureExtractor({indices:?})"),
            MlOperator::Constant { values } => format!(
                "Constant([{}])",
                values.iter().map(Value::to_string).collect::<Vec<_>>().join(", ")
            ),
            MlOperator::LinearModel {
                weights,
                intercepts,
                post,
            } => {
                let w: Vec<f64> = weights.iter().map(|r| r.first().copied().unwrap_or(0.0)).collect();
                format!(
                    "LinearModel(weights=[{}], intercepts=[{}], post={post:?})",
                    nums(&w),
                    nums(intercepts)
                )
            }
            MlOperator::TreeEnsemble {
                trees,
                aggregate,
                task,
                post,
            } => format!(
                "TreeEnsemble(trees={}, aggregate={aggregate:?}, task={task:?}, post={post:?})",
                trees.len()
            ),
        }
    }
}

/// Where a node input comes from: a pipeline input or another node's output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Input {
        input: String,
    },
    Node {
        node: String,
        #[serde(default, skip_serializing_if = "OutPort::is_default")]
        port: OutPort,
    },
}

impl Source {
    pub fn input(name: &str) -> Self {
        Source::Input { input: name.into() }
    }

    pub fn node(id: &str) -> Self {
        Source::Node {
            node: id.into(),
            port: OutPort::Out,
        }
    }

    pub fn node_port(id: &str, port: OutPort) -> Self {
        Source::Node {
            node: id.into(),
            port,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Input { input } => write!(f, "input:{input}"),
            Source::Node { node, port } if port.is_default() => f.write_str(node),
            Source::Node { node, port } => write!(f, "{node}.{port}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineInput {
    pub name: String,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineNode {
    pub id: String,
    #[serde(flatten)]
    pub op: MlOperator,
}

/// Wires `from` into input port `port` of node `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Source,
    pub to: String,
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutputs {
    pub label: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPipeline {
    pub name: String,
    pub inputs: Vec<PipelineInput>,
    pub nodes: Vec<PipelineNode>,
    pub edges: Vec<Edge>,
    pub outputs: PipelineOutputs,
}

impl ModelPipeline {
    pub fn node(&self, id: &str) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Input sources of `node`, ordered by port. Ports with no edge are skipped.
    pub fn node_inputs(&self, node: &str) -> Vec<Source> {
        let mut wired: Vec<&Edge> = self.edges.iter().filter(|e| e.to == node).collect();
        wired.sort_by_key(|e| e.port);
        wired.into_iter().map(|e| e.from.clone()).collect()
    }

    /// The model operators (linear models and tree ensembles) in node order.
    pub fn models(&self) -> impl Iterator<Item = &PipelineNode> {
        self.nodes.iter().filter(|n| n.op.is_model())
    }
}

/// Small builder used by fixtures and tests to assemble pipelines.
#[derive(Debug, Clone)]
pub struct PipelineBuilder {
    pipeline: ModelPipeline,
}

impl PipelineBuilder {
    pub fn new(name: &str) -> Self {
        PipelineBuilder {
            pipeline: ModelPipeline {
                name: name.into(),
                inputs: vec![],
                nodes: vec![],
                edges: vec![],
                outputs: PipelineOutputs {
                    label: Source::node(""),
                    score: None,
                },
            },
        }
    }

    pub fn input(mut self, name: &str, dtype: DType) -> Self {
        self.pipeline.inputs.push(PipelineInput {
            name: name.into(),
            dtype,
        });
        self
    }

    /// Adds a node fed by `sources` on ports `0..sources.len()`.
    pub fn node(mut self, id: &str, op: MlOperator, sources: Vec<Source>) -> Self {
        for (port, from) in sources.into_iter().enumerate() {
            self.pipeline.edges.push(Edge {
                from,
                to: id.into(),
                port,
            });
        }
        self.pipeline.nodes.push(PipelineNode { id: id.into(), op });
        self
    }

    /// Binds label/score outputs to the `label`/`score` ports of `model`.
    pub fn model_outputs(mut self, model: &str) -> Self {
        self.pipeline.outputs = PipelineOutputs {
            label: Source::node_port(model, OutPort::Label),
            score: Some(Source::node_port(model, OutPort::Score)),
        };
        self
    }

    pub fn build(self) -> ModelPipeline {
        self.pipeline
    }
}
