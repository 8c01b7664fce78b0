use serde::{Deserialize, Serialize};

use super::{validate, ModelPipeline, PipelineError};

pub const FORMAT_TAG: &str = "ravenlet/1";

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    #[serde(flatten)]
    pipeline: ModelPipeline,
}

/// Parses and validates a pipeline document.
pub fn load_pipeline(bytes: &[u8]) -> Result<ModelPipeline, PipelineError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| PipelineError::Schema(format!("document is not UTF-8: {e}")))?;
    let doc: Document =
        serde_json::from_str(text).map_err(|e| PipelineError::Schema(e.to_string()))?;
    if doc.format != FORMAT_TAG {
        return Err(PipelineError::Schema(format!(
            "unsupported format '{}', expected '{FORMAT_TAG}'",
            doc.format
        )));
    }
    let pipeline = doc.pipeline;
    let report = validate(&pipeline);
    if !report.is_empty() {
        return Err(PipelineError::Validation(report));
    }
    Ok(pipeline)
}

/// Canonical pretty-printed JSON; refuses pipelines that do not validate.
pub fn save_pipeline(p: &ModelPipeline) -> Result<Vec<u8>, PipelineError> {
    let report = validate(p);
    if !report.is_empty() {
        return Err(PipelineError::Validation(report));
    }
    let doc = Document {
        format: FORMAT_TAG.to_string(),
        pipeline: p.clone(),
    };
    let mut out =
        serde_json::to_vec_pretty(&doc).map_err(|e| PipelineError::Schema(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pipeline::{MlOperator, PipelineBuilder, Source};
    use crate::value::DType;

    fn identity() -> ModelPipeline {
        PipelineBuilder::new("identity")
            .input("x", DType::Float64)
            .node(
                "scaler",
                MlOperator::Scaler {
                    offsets: vec![0.0],
                    scales: vec![1.0],
                },
                vec![Source::input("x")],
            )
            .node(
                "model",
                MlOperator::LinearModel {
                    weights: vec![vec![1.0]],
                    intercepts: vec![0.0],
                    post: Default::default(),
                },
                vec![Source::node("scaler")],
            )
            .model_outputs("model")
            .build()
    }

    #[test]
    fn trivial_document_loads() {
        let doc = br#"{
            "format": "ravenlet/1",
            "name": "identity",
            "inputs": [{"name": "x", "dtype": "float64"}],
            "nodes": [
                {"id": "scaler", "op": "Scaler", "offsets": [0], "scales": [1]},
                {"id": "model", "op": "LinearModel", "weights": [[1]], "intercepts": [0]}
            ],
            "edges": [
                {"from": {"input": "x"}, "to": "scaler", "port": 0},
                {"from": {"node": "scaler"}, "to": "model", "port": 0}
            ],
            "outputs": {"label": {"node": "model", "port": "label"}, "score": {"node": "model", "port": "score"}}
        }"#;
        let p = load_pipeline(doc).unwrap();
        assert_eq!(p.nodes.len(), 2);
        assert_eq!(p.inputs.len(), 1);
        assert_eq!(p, identity());
    }

    #[test]
    fn dangling_concat_input_is_a_validation_error() {
        let doc = br#"{
            "format": "ravenlet/1", "name": "bad",
            "inputs": [{"name": "x", "dtype": "float64"}],
            "nodes": [{"id": "cat", "op": "Concat", "arity": 2},
                      {"id": "m", "op": "LinearModel", "weights": [[1],[1]], "intercepts": [0]}],
            "edges": [{"from": {"input": "x"}, "to": "cat", "port": 0},
                      {"from": {"node": "ghost"}, "to": "cat", "port": 1},
                      {"from": {"node": "cat"}, "to": "m", "port": 0}],
            "outputs": {"label": {"node": "m", "port": "label"}}
        }"#;
        match load_pipeline(doc) {
            Err(PipelineError::Validation(r)) => assert!(r.mentions("dangling edge"), "{r}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_documents_are_schema_errors() {
        assert!(matches!(load_pipeline(b"{"), Err(PipelineError::Schema(_))));
        assert!(matches!(
            load_pipeline(br#"{"format": "onnx", "name": "x", "inputs": [], "nodes": [], "edges": [], "outputs": {"label": {"node": "a"}}}"#),
            Err(PipelineError::Schema(_))
        ));
        assert!(matches!(load_pipeline(&[0xff, 0xfe]), Err(PipelineError::Schema(_))));
    }

    #[test]
    fn round_trips() {
        for p in [identity(), fixtures::covid_pipeline()] {
            let bytes = save_pipeline(&p).unwrap();
            assert_eq!(load_pipeline(&bytes).unwrap(), p);
            // Canonical: saving again yields the same bytes.
            assert_eq!(save_pipeline(&load_pipeline(&bytes).unwrap()).unwrap(), bytes);
        }
    }

    #[test]
    fn nan_scale_cannot_be_saved() {
        let mut p = identity();
        if let MlOperator::Scaler { scales, .. } = &mut p.nodes[0].op {
            scales[0] = f64::NAN;
        }
        match save_pipeline(&p) {
            Err(PipelineError::Validation(r)) => assert!(r.mentions("non-finite scale")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn running_example_loads_with_one_tree() {
        let bytes = save_pipeline(&fixtures::covid_pipeline()).unwrap();
        let p = load_pipeline(&bytes).unwrap();
        assert_eq!(p.nodes.len(), 5);
        let trees = p
            .models()
            .map(|m| match &m.op {
                MlOperator::TreeEnsemble { trees, .. } => trees.len(),
                _ => 0,
            })
            .sum::<usize>();
        assert_eq!(trees, 1);
        assert!(validate(&p).is_empty());
    }
}
