//! Pipeline statistics and the choice of physical transformation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::Plan;
use crate::ml2dnn::compile_plan_to_tensors;
use crate::ml2sql::{compile_plan_to_sql, Ml2SqlConfig};
use crate::pipeline::{validate_with_types, MlOperator, ModelPipeline, OpKind, Source};

/// Structural statistics of a pipeline. Every field is a count or a
/// summary of counts; all are non-negative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub n_pipeline_inputs: f64,
    /// Width of the feature vectors the models read.
    pub n_model_features: f64,
    pub n_operators_total: f64,
    pub n_scaler: f64,
    pub n_normalizer: f64,
    pub n_one_hot_encoder: f64,
    pub n_label_encoder: f64,
    pub n_concat: f64,
    pub n_feature_extractor: f64,
    pub n_linear_model: f64,
    pub n_tree_ensemble: f64,
    pub mean_ohe_outputs: f64,
    pub max_ohe_outputs: f64,
    pub n_trees: f64,
    /// In edges; 0 when there are no trees.
    pub mean_tree_depth: f64,
    pub max_tree_depth: f64,
    /// Population standard deviation.
    pub stddev_tree_depth: f64,
    pub n_tree_nodes_total: f64,
    pub n_leaves_total: f64,
    pub linear_weight_count: f64,
    pub linear_zero_weight_fraction: f64,
    /// Most input edges into one operator.
    pub max_operator_fan_in: f64,
}

impl PipelineStats {
    pub const FIELDS: [&'static str; 22] = [
        "n_pipeline_inputs",
        "n_model_features",
        "n_operators_total",
        "n_scaler",
        "n_normalizer",
        "n_one_hot_encoder",
        "n_label_encoder",
        "n_concat",
        "n_feature_extractor",
        "n_linear_model",
        "n_tree_ensemble",
        "mean_ohe_outputs",
        "max_ohe_outputs",
        "n_trees",
        "mean_tree_depth",
        "max_tree_depth",
        "stddev_tree_depth",
        "n_tree_nodes_total",
        "n_leaves_total",
        "linear_weight_count",
        "linear_zero_weight_fraction",
        "max_operator_fan_in",
    ];

    pub fn get(&self, field: &str) -> Option<f64> {
        Some(match field {
            "n_pipeline_inputs" => self.n_pipeline_inputs,
            "n_model_features" => self.n_model_features,
            "n_operators_total" => self.n_operators_total,
            "n_scaler" => self.n_scaler,
            "n_normalizer" => self.n_normalizer,
            "n_one_hot_encoder" => self.n_one_hot_encoder,
            "n_label_encoder" => self.n_label_encoder,
            "n_concat" => self.n_concat,
            "n_feature_extractor" => self.n_feature_extractor,
            "n_linear_model" => self.n_linear_model,
            "n_tree_ensemble" => self.n_tree_ensemble,
            "mean_ohe_outputs" => self.mean_ohe_outputs,
            "max_ohe_outputs" => self.max_ohe_outputs,
            "n_trees" => self.n_trees,
            "mean_tree_depth" => self.mean_tree_depth,
            "max_tree_depth" => self.max_tree_depth,
            "stddev_tree_depth" => self.stddev_tree_depth,
            "n_tree_nodes_total" => self.n_tree_nodes_total,
            "n_leaves_total" => self.n_leaves_total,
            "linear_weight_count" => self.linear_weight_count,
            "linear_zero_weight_fraction" => self.linear_zero_weight_fraction,
            "max_operator_fan_in" => self.max_operator_fan_in,
            _ => return None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Computes all statistics. Widths come from type inference, so an invalid
/// pipeline yields a model feature count of 0 for the unresolved models.
pub fn extract_stats(p: &ModelPipeline) -> PipelineStats {
    let (_, types) = validate_with_types(p);
    let mut s = PipelineStats {
        n_pipeline_inputs: p.inputs.len() as f64,
        n_operators_total: p.nodes.len() as f64,
        ..Default::default()
    };
    let mut ohe_outputs = Vec::new();
    let mut depths = Vec::new();
    let mut zero_weights = 0usize;
    for n in &p.nodes {
        let inputs = p.node_inputs(&n.id);
        s.max_operator_fan_in = s.max_operator_fan_in.max(inputs.len() as f64);
        match n.op.kind() {
            OpKind::Scaler => s.n_scaler += 1.0,
            OpKind::Normalizer => s.n_normalizer += 1.0,
            OpKind::OneHotEncoder => s.n_one_hot_encoder += 1.0,
            OpKind::LabelEncoder => s.n_label_encoder += 1.0,
            OpKind::Concat => s.n_concat += 1.0,
            OpKind::FeatureExtractor => s.n_feature_extractor += 1.0,
            OpKind::LinearModel => s.n_linear_model += 1.0,
            OpKind::TreeEnsemble => s.n_tree_ensemble += 1.0,
            OpKind::Constant => {}
        }
        match &n.op {
            MlOperator::OneHotEncoder { categories } => {
                ohe_outputs.push(categories.iter().map(Vec::len).sum::<usize>() as f64);
            }
            MlOperator::TreeEnsemble { trees, .. } => {
                for t in trees {
                    depths.push(t.depth() as f64);
                    s.n_tree_nodes_total += t.node_count() as f64;
                    s.n_leaves_total += t.leaves().len() as f64;
                }
            }
            MlOperator::LinearModel { weights, .. } => {
                for w in weights {
                    s.linear_weight_count += w.len() as f64;
                    zero_weights += w.iter().filter(|x| **x == 0.0).count();
                }
            }
            _ => {}
        }
        if n.op.is_model() {
            for src in &inputs {
                s.n_model_features += match src {
                    Source::Input { .. } => 1,
                    Source::Node { node, port } => types.get(node).and_then(|m| m.get(port)).map_or(0, Vec::len),
                } as f64;
            }
        }
    }
    let (mean_ohe, _) = mean_std(&ohe_outputs);
    s.mean_ohe_outputs = mean_ohe;
    s.max_ohe_outputs = ohe_outputs.iter().copied().fold(0.0, f64::max);
    s.n_trees = depths.len() as f64;
    let (mean_d, std_d) = mean_std(&depths);
    s.mean_tree_depth = mean_d;
    s.stddev_tree_depth = std_d;
    s.max_tree_depth = depths.iter().copied().fold(0.0, f64::max);
    if s.linear_weight_count > 0.0 {
        s.linear_zero_weight_fraction = zero_weights as f64 / s.linear_weight_count;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    #[serde(rename = "MLtoSQL")]
    MlToSql,
    #[serde(rename = "MLtoDNN")]
    MlToDnn,
    NoTransform,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::MlToSql => "MLtoSQL",
            Transform::MlToDnn => "MLtoDNN",
            Transform::NoTransform => "NoTransform",
        }
    }

    pub fn parse(s: &str) -> Option<Transform> {
        match s {
            "MLtoSQL" => Some(Transform::MlToSql),
            "MLtoDNN" => Some(Transform::MlToDnn),
            "NoTransform" => Some(Transform::NoTransform),
            _ => None,
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformChoice {
    pub transform: Transform,
    pub rationale: String,
}

pub const DNN_FEATURE_THRESHOLD: f64 = 100.0;
pub const SQL_INPUT_THRESHOLD: f64 = 12.0;
pub const SQL_MAX_MEAN_DEPTH: f64 = 10.0;

/// The default rule: many model features favour the tensor runtime; many
/// pipeline inputs with shallow trees favour inlining as SQL.
pub fn choose_transform(stats: &PipelineStats, has_gpu: bool) -> TransformChoice {
    if stats.n_model_features > DNN_FEATURE_THRESHOLD {
        let mut rationale = format!(
            "n_model_features = {} > {DNN_FEATURE_THRESHOLD}",
            stats.n_model_features
        );
        if !has_gpu {
            rationale.push_str("; no GPU, the tensor program runs on the CPU interpreter");
        }
        return TransformChoice {
            transform: Transform::MlToDnn,
            rationale,
        };
    }
    if stats.n_pipeline_inputs > SQL_INPUT_THRESHOLD && stats.mean_tree_depth <= SQL_MAX_MEAN_DEPTH {
        return TransformChoice {
            transform: Transform::MlToSql,
            rationale: format!(
                "n_model_features = {} <= {DNN_FEATURE_THRESHOLD}, n_pipeline_inputs = {} > {SQL_INPUT_THRESHOLD}, mean_tree_depth = {} <= {SQL_MAX_MEAN_DEPTH}",
                stats.n_model_features, stats.n_pipeline_inputs, stats.mean_tree_depth
            ),
        };
    }
    TransformChoice {
        transform: Transform::NoTransform,
        rationale: format!(
            "n_model_features = {}, n_pipeline_inputs = {}, mean_tree_depth = {}: no rule applies",
            stats.n_model_features, stats.n_pipeline_inputs, stats.mean_tree_depth
        ),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("predictor table: {0}")]
pub struct PredictorFormatError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitCmp {
    Gt,
    Ge,
    Lt,
    Le,
}

/// A decision table over statistic names: splits route to `when_true` if
/// `stats[field] cmp threshold`, leaves name a transform.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorTable {
    Split {
        field: String,
        cmp: SplitCmp,
        threshold: f64,
        when_true: Box<PredictorTable>,
        when_false: Box<PredictorTable>,
    },
    Leaf(Transform),
}

impl PredictorTable {
    /// Parses `{"choice": ...}` leaves and
    /// `{"field", "threshold", "cmp"?, "true", "false"}` splits. `cmp`
    /// defaults to `>`.
    pub fn from_json(text: &str) -> Result<PredictorTable, PredictorFormatError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| PredictorFormatError(e.to_string()))?;
        Self::from_value(&v, "$")
    }

    fn from_value(v: &serde_json::Value, path: &str) -> Result<PredictorTable, PredictorFormatError> {
        let bad = |m: String| PredictorFormatError(format!("{path}: {m}"));
        let obj = v.as_object().ok_or_else(|| bad("expected an object".into()))?;
        if let Some(c) = obj.get("choice") {
            if obj.len() != 1 {
                return Err(bad("a leaf holds only \"choice\"".into()));
            }
            let name = c.as_str().ok_or_else(|| bad("choice must be a string".into()))?;
            return Transform::parse(name)
                .map(PredictorTable::Leaf)
                .ok_or_else(|| bad(format!("unknown choice '{name}'")));
        }
        for k in obj.keys() {
            if !["field", "threshold", "cmp", "true", "false"].contains(&k.as_str()) {
                return Err(bad(format!("unknown key '{k}'")));
            }
        }
        let field = obj
            .get("field")
            .and_then(|f| f.as_str())
            .ok_or_else(|| bad("split needs a string \"field\"".into()))?;
        let threshold = obj
            .get("threshold")
            .and_then(|t| t.as_f64())
            .ok_or_else(|| bad("split needs a numeric \"threshold\"".into()))?;
        let cmp = match obj.get("cmp").map(|c| c.as_str()) {
            None | Some(Some(">")) => SplitCmp::Gt,
            Some(Some(">=")) => SplitCmp::Ge,
            Some(Some("<")) => SplitCmp::Lt,
            Some(Some("<=")) => SplitCmp::Le,
            Some(other) => return Err(bad(format!("bad cmp {other:?}"))),
        };
        let child = |k: &str| -> Result<Box<PredictorTable>, PredictorFormatError> {
            let c = obj.get(k).ok_or_else(|| bad(format!("split needs \"{k}\"")))?;
            Ok(Box::new(Self::from_value(c, &format!("{path}.{k}"))?))
        };
        Ok(PredictorTable::Split {
            field: field.to_string(),
            cmp,
            threshold,
            when_true: child("true")?,
            when_false: child("false")?,
        })
    }

    /// The chosen transform, or `None` when a split names an unknown field.
    pub fn evaluate(&self, stats: &PipelineStats) -> Option<(Transform, Vec<String>)> {
        let mut at = self;
        let mut path = Vec::new();
        loop {
            match at {
                PredictorTable::Leaf(t) => return Some((*t, path)),
                PredictorTable::Split {
                    field,
                    cmp,
                    threshold,
                    when_true,
                    when_false,
                } => {
                    let x = stats.get(field)?;
                    let hit = match cmp {
                        SplitCmp::Gt => x > *threshold,
                        SplitCmp::Ge => x >= *threshold,
                        SplitCmp::Lt => x < *threshold,
                        SplitCmp::Le => x <= *threshold,
                    };
                    path.push(format!("{field} = {x} -> {hit}"));
                    at = if hit { when_true } else { when_false };
                }
            }
        }
    }
}

/// Evaluates a predictor table, falling back to the default rule when the
/// table names a statistic that does not exist.
pub fn choose_transform_external(stats: &PipelineStats, table: &PredictorTable, has_gpu: bool) -> TransformChoice {
    match table.evaluate(stats) {
        Some((t, path)) => TransformChoice {
            transform: t,
            rationale: if path.is_empty() {
                "predictor table leaf".into()
            } else {
                format!("predictor table: {}", path.join(", "))
            },
        },
        None => {
            let mut c = choose_transform(stats, has_gpu);
            c.rationale = format!("predictor table names an unknown field; rule: {}", c.rationale);
            c
        }
    }
}

/// How the physical transformation is picked.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategySpec {
    Rule,
    Table(PredictorTable),
    None,
}

impl StrategySpec {
    pub fn choose(&self, stats: &PipelineStats, has_gpu: bool) -> TransformChoice {
        match self {
            StrategySpec::Rule => choose_transform(stats, has_gpu),
            StrategySpec::Table(t) => choose_transform_external(stats, t, has_gpu),
            StrategySpec::None => TransformChoice {
                transform: Transform::NoTransform,
                rationale: "strategy disabled".into(),
            },
        }
    }
}

/// Applies a transform to a plan. When `transform` cannot express the
/// plan, it is returned unchanged with a note saying why.
pub fn apply_transform(plan: &Plan, choice: &TransformChoice, allowed: (bool, bool)) -> Plan {
    let (sql_ok, dnn_ok) = allowed;
    let mut out = match choice.transform {
        Transform::NoTransform => plan.clone(),
        Transform::MlToSql if !sql_ok => with_note(plan, "MLtoSQL disabled by the pass list"),
        Transform::MlToDnn if !dnn_ok => with_note(plan, "MLtoDNN disabled by the pass list"),
        Transform::MlToSql => match compile_plan_to_sql(plan, &Ml2SqlConfig::default()) {
            Ok(p) => p,
            Err(e) => with_note(plan, &format!("MLtoSQL not applied: {e}")),
        },
        Transform::MlToDnn => match compile_plan_to_tensors(plan) {
            Ok(p) => p,
            Err(e) => with_note(plan, &format!("MLtoDNN not applied: {e}")),
        },
    };
    out.notes
        .insert(0, format!("strategy chose {}: {}", choice.transform, choice.rationale));
    out
}

fn with_note(plan: &Plan, note: &str) -> Plan {
    let mut p = plan.clone();
    p.notes.push(note.to_string());
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn running_example_stats() {
        let s = extract_stats(&fixtures::covid_pipeline());
        assert_eq!(s.n_pipeline_inputs, 4.0);
        assert_eq!(s.n_model_features, 6.0);
        assert_eq!(s.n_trees, 1.0);
        assert_eq!(s.n_one_hot_encoder, 2.0);
        assert_eq!(s.max_ohe_outputs, 2.0);
        assert_eq!(s.max_operator_fan_in, 3.0);
        for f in PipelineStats::FIELDS {
            assert!(s.get(f).is_some(), "{f}");
        }
    }

    #[test]
    fn table_parsing() {
        let t = PredictorTable::from_json(r#"{"choice": "MLtoSQL"}"#).unwrap();
        assert_eq!(t, PredictorTable::Leaf(Transform::MlToSql));
        assert!(PredictorTable::from_json(r#"{"choice": "GPU"}"#).is_err());
        assert!(PredictorTable::from_json(r#"{"field": "n_trees", "true": {"choice": "MLtoSQL"}}"#).is_err());
        assert!(PredictorTable::from_json("[1]").is_err());
    }

    #[test]
    fn unknown_field_falls_back_to_rule() {
        let t = PredictorTable::from_json(
            r#"{"field": "bogus", "threshold": 1, "true": {"choice": "MLtoDNN"}, "false": {"choice": "MLtoDNN"}}"#,
        )
        .unwrap();
        let c = choose_transform_external(&PipelineStats::default(), &t, false);
        assert_eq!(c.transform, Transform::NoTransform);
        assert!(c.rationale.contains("unknown field"));
    }
}
