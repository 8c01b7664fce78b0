//! The COVID-risk running example: a three-table patient query scored by a
//! single decision tree behind a scaler and two one-hot encoders.
//!
//! Used by the CLI sample data, documentation and tests.

use std::collections::BTreeMap;

use crate::executor::{ColumnData, Table};
use crate::frontend::{Catalog, ColumnDef, TableSchema};
use crate::pipeline::{
    Aggregate, Cmp, DecisionTree, MlOperator, ModelPipeline, PipelineBuilder, PostTransform,
    Source, Task,
};
use crate::value::{DType, Value};

pub const COVID_QUERY: &str = "\
SELECT pi.pid, PREDICT(covid_risk.json, *) AS risk_of_covid
FROM patient_info AS pi
JOIN blood_test AS bt ON pi.pid = bt.pid
JOIN pulmonary_test AS pt ON pi.pid = pt.pid
WHERE pi.asthma = 1 AND risk_of_covid = 1
";

fn leaf(v: f64) -> DecisionTree {
    DecisionTree::leaf(vec![v])
}

/// Feature layout after the Concat:
/// `[age, bpm_scaled, not_asthma, asthma, gender_F, gender_M]`.
pub fn covid_tree() -> DecisionTree {
    let asthma_branch = DecisionTree::split(
        0,
        Cmp::Gt,
        60.0,
        DecisionTree::split(4, Cmp::Eq, 0.0, leaf(1.0), leaf(0.0)),
        DecisionTree::split(5, Cmp::Eq, 1.0, leaf(1.0), leaf(0.0)),
    );
    let other_branch = DecisionTree::split(
        1,
        Cmp::Gt,
        2.0,
        leaf(1.0),
        DecisionTree::split(2, Cmp::Eq, 1.0, leaf(0.0), leaf(1.0)),
    );
    DecisionTree::split(3, Cmp::Eq, 1.0, asthma_branch, other_branch)
}

/// The tree left after pruning with `asthma = 1` and densifying onto the
/// used features `[0, 4, 5]` (renumbered `[0, 1, 2]`).
pub fn covid_pruned_dense_tree() -> DecisionTree {
    DecisionTree::split(
        0,
        Cmp::Gt,
        60.0,
        DecisionTree::split(1, Cmp::Eq, 0.0, leaf(1.0), leaf(0.0)),
        DecisionTree::split(2, Cmp::Eq, 1.0, leaf(1.0), leaf(0.0)),
    )
}

pub fn covid_pipeline() -> ModelPipeline {
    PipelineBuilder::new("covid_risk")
        .input("age", DType::Float64)
        .input("bpm", DType::Float64)
        .input("asthma", DType::Int64)
        .input("gender", DType::String)
        .node(
            "scaler",
            MlOperator::Scaler {
                offsets: vec![0.0, 70.0],
                scales: vec![1.0, 0.1],
            },
            vec![Source::input("age"), Source::input("bpm")],
        )
        .node(
            "asthma_ohe",
            MlOperator::OneHotEncoder {
                categories: vec![vec![Value::Int(0), Value::Int(1)]],
            },
            vec![Source::input("asthma")],
        )
        .node(
            "gender_ohe",
            MlOperator::OneHotEncoder {
                categories: vec![vec![Value::Str("F".into()), Value::Str("M".into())]],
            },
            vec![Source::input("gender")],
        )
        .node(
            "concat",
            MlOperator::Concat { arity: 3 },
            vec![
                Source::node("scaler"),
                Source::node("asthma_ohe"),
                Source::node("gender_ohe"),
            ],
        )
        .node(
            "tree",
            MlOperator::TreeEnsemble {
                trees: vec![covid_tree()],
                aggregate: Aggregate::Average,
                task: Task::BinaryClassification,
                post: PostTransform::None,
            },
            vec![Source::node("concat")],
        )
        .model_outputs("tree")
        .build()
}

pub fn covid_catalog() -> Catalog {
    let table = |cols: &[(&str, DType)]| TableSchema {
        columns: cols
            .iter()
            .map(|(n, d)| ColumnDef {
                name: n.to_string(),
                dtype: *d,
            })
            .collect(),
        partition_column: None,
    };
    let mut tables = BTreeMap::new();
    tables.insert(
        "patient_info".to_string(),
        table(&[
            ("pid", DType::Int64),
            ("age", DType::Float64),
            ("gender", DType::String),
            ("asthma", DType::Int64),
        ]),
    );
    tables.insert(
        "blood_test".to_string(),
        table(&[("pid", DType::Int64), ("glucose", DType::Float64)]),
    );
    tables.insert(
        "pulmonary_test".to_string(),
        table(&[("pid", DType::Int64), ("bpm", DType::Float64)]),
    );
    Catalog { tables }
}

/// Ten patients. Rows with `asthma = 1` are pids 1, 2, 4, 5, 7, 8, 10; of
/// those the tree predicts 1 for pids 1, 4 and 7.
pub fn covid_tables() -> BTreeMap<String, Table> {
    let pids: Vec<i64> = (1..=10).collect();
    let ages = vec![72.0, 45.0, 66.0, 81.0, 30.0, 58.0, 64.0, 39.0, 70.0, 61.0];
    let genders = ["M", "F", "F", "M", "F", "M", "M", "F", "F", "F"];
    let asthma = vec![1, 1, 0, 1, 1, 0, 1, 1, 0, 1];
    let glucose = vec![5.1, 6.3, 4.8, 7.2, 5.5, 5.0, 6.1, 4.9, 5.7, 6.6];
    let bpm = vec![88.0, 102.0, 75.0, 95.0, 80.0, 110.0, 70.0, 91.0, 85.0, 99.0];

    let mut tables = BTreeMap::new();
    tables.insert(
        "patient_info".to_string(),
        Table::new(
            vec![
                ("pid", DType::Int64),
                ("age", DType::Float64),
                ("gender", DType::String),
                ("asthma", DType::Int64),
            ],
            vec![
                ColumnData::Int(pids.clone()),
                ColumnData::Float(ages),
                ColumnData::Str(genders.iter().map(|s| s.to_string()).collect()),
                ColumnData::Int(asthma),
            ],
        )
        .expect("fixture table"),
    );
    tables.insert(
        "blood_test".to_string(),
        Table::new(
            vec![("pid", DType::Int64), ("glucose", DType::Float64)],
            vec![ColumnData::Int(pids.clone()), ColumnData::Float(glucose)],
        )
        .expect("fixture table"),
    );
    tables.insert(
        "pulmonary_test".to_string(),
        Table::new(
            vec![("pid", DType::Int64), ("bpm", DType::Float64)],
            vec![ColumnData::Int(pids), ColumnData::Float(bpm)],
        )
        .expect("fixture table"),
    );
    tables
}
