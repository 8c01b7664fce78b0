mod common;

use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use common::{random_case, Case};
use ravenlet::executor::{evaluate_pipeline, evaluate_pipeline_chunked, execute_plan, run_partitioned, ColumnData, Table};
use ravenlet::frontend::{Catalog, ColumnDef, TableSchema};
use ravenlet::ml2sql::sql_to_plan;
use ravenlet::optimizer::{optimize, PassSet};
use ravenlet::pipeline::{DecisionTree, MlOperator, ModelPipeline, OpKind, Source, TreeNode};
use ravenlet::strategy::{choose_transform, choose_transform_external, extract_stats, PipelineStats, PredictorTable};
use ravenlet::value::DType;

fn rows_sorted(t: &Table) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = (0..t.rows)
        .map(|r| t.columns.iter().map(|c| c.render(r)).collect())
        .collect();
    rows.sort();
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimizing_never_changes_results(seed in 1000u64..100_000) {
        let case = random_case(seed);
        let plan = case.plan();
        let base = case.run(&plan);
        for passes in PassSet::subsets() {
            let plans = optimize(&plan, passes, Some(&case.stats), &case.catalog).unwrap();
            let got = run_partitioned(&plans, &case.tables).unwrap();
            if plans.len() == 1 {
                prop_assert_eq!(&got, &base, "passes {}", passes);
            } else {
                prop_assert_eq!(rows_sorted(&got), rows_sorted(&base), "passes {}", passes);
            }
        }
    }

    #[test]
    fn chunk_size_does_not_matter(seed in 1000u64..100_000, chunk in 1usize..1200) {
        let case = random_case(seed);
        prop_assume!(case.tables.len() == 1);
        let batch = &case.tables["t"];
        let whole = evaluate_pipeline(&case.pipeline, batch).unwrap();
        let chunked = evaluate_pipeline_chunked(&case.pipeline, batch, chunk).unwrap();
        prop_assert_eq!(whole, chunked);
    }
}

fn kv_table(keys: &[i64], tag: &str) -> Table {
    Table::new(
        vec![("k", DType::Int64), ("v", DType::String)],
        vec![
            ColumnData::Int(keys.to_vec()),
            ColumnData::Str((0..keys.len()).map(|i| format!("{tag}{i}")).collect()),
        ],
    )
    .unwrap()
}

fn kv_catalog() -> Catalog {
    let schema = TableSchema {
        columns: vec![
            ColumnDef {
                name: "k".into(),
                dtype: DType::Int64,
            },
            ColumnDef {
                name: "v".into(),
                dtype: DType::String,
            },
        ],
        partition_column: None,
    };
    Catalog {
        tables: BTreeMap::from([("a".to_string(), schema.clone()), ("b".to_string(), schema)]),
    }
}

proptest! {
    #[test]
    fn hash_join_matches_nested_loop(
        left in prop::collection::vec(0i64..6, 0..40),
        right in prop::collection::vec(0i64..6, 0..40),
    ) {
        let tables = BTreeMap::from([
            ("a".to_string(), kv_table(&left, "l")),
            ("b".to_string(), kv_table(&right, "r")),
        ]);
        let plan = sql_to_plan("SELECT * FROM a JOIN b ON a.k = b.k", &kv_catalog()).unwrap();
        let got = execute_plan(&plan, &tables).unwrap();
        let mut want = Vec::new();
        for (i, l) in left.iter().enumerate() {
            for (j, r) in right.iter().enumerate() {
                if l == r {
                    want.push(vec![l.to_string(), format!("l{i}"), r.to_string(), format!("r{j}")]);
                }
            }
        }
        want.sort();
        prop_assert_eq!(rows_sorted(&got), want);
    }
}

fn stats_strategy() -> impl Strategy<Value = PipelineStats> {
    (
        prop_oneof![0.0..300.0f64, (90u32..110).prop_map(f64::from)],
        prop_oneof![0.0..40.0f64, (10u32..15).prop_map(f64::from)],
        prop_oneof![0.0..20.0f64, (8u32..12).prop_map(f64::from)],
    )
        .prop_map(|(features, inputs, depth)| PipelineStats {
            n_model_features: features,
            n_pipeline_inputs: inputs,
            mean_tree_depth: depth,
            ..PipelineStats::default()
        })
}

const RULE_AS_TABLE: &str = r#"{
  "field": "n_model_features", "threshold": 100,
  "true": {"choice": "MLtoDNN"},
  "false": {
    "field": "n_pipeline_inputs", "threshold": 12,
    "true": {
      "field": "mean_tree_depth", "cmp": "<=", "threshold": 10,
      "true": {"choice": "MLtoSQL"},
      "false": {"choice": "NoTransform"}
    },
    "false": {"choice": "NoTransform"}
  }
}"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn predictor_table_encoding_the_rule_agrees_with_it(stats in stats_strategy(), gpu in any::<bool>()) {
        let table = PredictorTable::from_json(RULE_AS_TABLE).unwrap();
        let from_table = choose_transform_external(&stats, &table, gpu).transform;
        prop_assert_eq!(from_table, choose_transform(&stats, gpu).transform);
    }
}

/// Output widths recomputed from the operator definitions.
fn widths(p: &ModelPipeline) -> HashMap<String, usize> {
    let mut out: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<&ravenlet::pipeline::PipelineNode> = p.nodes.iter().collect();
    while !pending.is_empty() {
        pending.retain(|n| {
            let ins: Option<Vec<usize>> = p
                .node_inputs(&n.id)
                .iter()
                .map(|s| match s {
                    Source::Input { .. } => Some(1),
                    Source::Node { node, .. } => out.get(node).copied(),
                })
                .collect();
            let Some(ins) = ins else { return true };
            let total: usize = ins.iter().sum();
            let w = match &n.op {
                MlOperator::OneHotEncoder { categories } => categories.iter().map(Vec::len).sum(),
                MlOperator::FeatureExtractor { indices } => indices.len(),
                MlOperator::Constant { values } => values.len(),
                MlOperator::LinearModel { .. } | MlOperator::TreeEnsemble { .. } => 1,
                _ => total,
            };
            out.insert(n.id.clone(), w);
            false
        });
    }
    out
}

fn walk(t: &DecisionTree, at: usize, depth: usize, acc: &mut (usize, usize, usize)) {
    acc.0 += 1;
    acc.2 = acc.2.max(depth);
    match &t.nodes[at] {
        TreeNode::Leaf { .. } => acc.1 += 1,
        TreeNode::Internal {
            true_child,
            false_child,
            ..
        } => {
            walk(t, *true_child, depth + 1, acc);
            walk(t, *false_child, depth + 1, acc);
        }
    }
}

fn brute_force(case: &Case) -> PipelineStats {
    let p = &case.pipeline;
    let w = widths(p);
    let count = |k: OpKind| p.nodes.iter().filter(|n| n.op.kind() == k).count() as f64;
    let mut s = PipelineStats {
        n_pipeline_inputs: p.inputs.len() as f64,
        n_operators_total: p.nodes.len() as f64,
        n_scaler: count(OpKind::Scaler),
        n_normalizer: count(OpKind::Normalizer),
        n_one_hot_encoder: count(OpKind::OneHotEncoder),
        n_label_encoder: count(OpKind::LabelEncoder),
        n_concat: count(OpKind::Concat),
        n_feature_extractor: count(OpKind::FeatureExtractor),
        n_linear_model: count(OpKind::LinearModel),
        n_tree_ensemble: count(OpKind::TreeEnsemble),
        ..PipelineStats::default()
    };
    let mut depths = Vec::new();
    let mut ohe = Vec::new();
    let mut zeros = 0.0;
    for n in &p.nodes {
        let fan_in = p.edges.iter().filter(|e| e.to == n.id).count() as f64;
        s.max_operator_fan_in = s.max_operator_fan_in.max(fan_in);
        if n.op.is_model() {
            s.n_model_features += p
                .node_inputs(&n.id)
                .iter()
                .map(|src| match src {
                    Source::Input { .. } => 1,
                    Source::Node { node, .. } => w[node],
                })
                .sum::<usize>() as f64;
        }
        match &n.op {
            MlOperator::OneHotEncoder { categories } => ohe.push(categories.iter().map(Vec::len).sum::<usize>() as f64),
            MlOperator::TreeEnsemble { trees, .. } => {
                for t in trees {
                    let mut acc = (0, 0, 0);
                    walk(t, 0, 0, &mut acc);
                    s.n_tree_nodes_total += acc.0 as f64;
                    s.n_leaves_total += acc.1 as f64;
                    depths.push(acc.2 as f64);
                }
            }
            MlOperator::LinearModel { weights, .. } => {
                for x in weights.iter().flatten() {
                    s.linear_weight_count += 1.0;
                    if *x == 0.0 {
                        zeros += 1.0;
                    }
                }
            }
            _ => {}
        }
    }
    if !ohe.is_empty() {
        s.mean_ohe_outputs = ohe.iter().sum::<f64>() / ohe.len() as f64;
        s.max_ohe_outputs = ohe.iter().copied().fold(0.0, f64::max);
    }
    s.n_trees = depths.len() as f64;
    if !depths.is_empty() {
        let mean = depths.iter().sum::<f64>() / depths.len() as f64;
        s.mean_tree_depth = mean;
        s.max_tree_depth = depths.iter().copied().fold(0.0, f64::max);
        s.stddev_tree_depth = (depths.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / depths.len() as f64).sqrt();
    }
    if s.linear_weight_count > 0.0 {
        s.linear_zero_weight_fraction = zeros / s.linear_weight_count;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extracted_stats_match_brute_force(seed in 0u64..100_000) {
        let case = random_case(seed);
        let got = extract_stats(&case.pipeline);
        let want = brute_force(&case);
        for field in PipelineStats::FIELDS {
            let (a, b) = (got.get(field).unwrap(), want.get(field).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{}: {} vs {}", field, a, b);
        }
    }
}
