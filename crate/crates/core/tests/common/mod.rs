//! Random prediction-query cases shared by the integration tests.
//!
//! A case is one table `t` (optionally joined with `u`), a random pipeline
//! over some of its columns, a query, the data and exact column statistics.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ravenlet::driver::{build_plan, compare_results, output_columns};
use ravenlet::executor::{execute_plan, ColumnData, Field, Table};
use ravenlet::frontend::{Catalog, ColumnDef, TableSchema};
use ravenlet::ir::Plan;
use ravenlet::optimizer::{ColumnStats, PartitionStats, Stats};
use ravenlet::pipeline::{
    Aggregate, Cmp, DecisionTree, MlOperator, ModelPipeline, Norm, PipelineBuilder, PostTransform, Source, Task,
};
use ravenlet::value::{DType, Value};

pub const CORPUS_SIZE: u64 = 200;
pub const ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Trees,
    Linear,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub kind: ModelKind,
    pub pipeline: ModelPipeline,
    pub catalog: Catalog,
    pub query: String,
    pub tables: BTreeMap<String, Table>,
    pub stats: Stats,
}

impl Case {
    pub fn plan(&self) -> Plan {
        build_plan(&self.query, &self.pipeline, &self.catalog)
            .unwrap_or_else(|e| panic!("case {}: {e}\n{}", self.seed, self.query))
    }

    pub fn run(&self, plan: &Plan) -> Table {
        execute_plan(plan, &self.tables).unwrap_or_else(|e| panic!("case {}: {e}", self.seed))
    }
}

/// Value range of a feature, used to place split thresholds.
#[derive(Debug, Clone, Copy)]
pub enum Feat {
    Range(f64, f64),
    Discrete(i64, i64),
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn nonzero(rng: &mut impl Rng) -> f64 {
    let w = round2(rng.gen_range(0.05..2.0));
    if rng.gen_bool(0.5) {
        -w
    } else {
        w
    }
}

fn schema(cols: &[(String, DType)], partition: Option<&str>) -> TableSchema {
    TableSchema {
        columns: cols
            .iter()
            .map(|(n, d)| ColumnDef {
                name: n.clone(),
                dtype: *d,
            })
            .collect(),
        partition_column: partition.map(str::to_string),
    }
}

fn table(cols: Vec<(String, DType, ColumnData)>) -> Table {
    let fields = cols.iter().map(|(n, d, _)| Field::new(n.clone(), *d)).collect();
    Table::from_parts(fields, cols.into_iter().map(|c| c.2).collect()).expect("consistent table")
}

/// Exact min/max of every numeric column.
pub fn exact_stats(tables: &BTreeMap<String, Table>) -> Stats {
    let mut stats = Stats::default();
    for (name, t) in tables {
        let mut cols = BTreeMap::new();
        for (f, c) in t.fields.iter().zip(&t.columns) {
            if let Some(s) = ColumnStats::of_column(c) {
                cols.insert(f.name.clone(), s);
            }
        }
        stats.tables.insert(name.clone(), cols);
    }
    stats
}

/// A random tree whose splits are drawn from `feats`. Splitting becomes
/// less likely with depth so deep trees stay sparse.
pub fn random_tree(rng: &mut impl Rng, feats: &[(usize, Feat)], max_depth: usize, leaf_len: usize) -> DecisionTree {
    fn grow(
        rng: &mut impl Rng,
        feats: &[(usize, Feat)],
        depth: usize,
        max_depth: usize,
        leaf_len: usize,
    ) -> DecisionTree {
        let p_split = if depth == 0 { 1.0 } else { 0.85f64.powi(depth as i32) * 0.9 };
        if depth >= max_depth || !rng.gen_bool(p_split) {
            let value = (0..leaf_len).map(|_| round2(rng.gen_range(-1.0..1.0))).collect();
            return DecisionTree::leaf(value);
        }
        let (f, kind) = feats[rng.gen_range(0..feats.len())];
        let (cmp, threshold) = match kind {
            Feat::Range(lo, hi) => {
                let cmp = *[Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge].choose(rng).unwrap();
                (cmp, round2(rng.gen_range(lo..=hi)))
            }
            Feat::Discrete(lo, hi) => {
                let cmp = *[Cmp::Eq, Cmp::Eq, Cmp::Le, Cmp::Gt].choose(rng).unwrap();
                (cmp, rng.gen_range(lo..=hi) as f64)
            }
        };
        let t = grow(rng, feats, depth + 1, max_depth, leaf_len);
        let e = grow(rng, feats, depth + 1, max_depth, leaf_len);
        DecisionTree::split(f, cmp, threshold, t, e)
    }
    grow(rng, feats, 0, max_depth, leaf_len)
}

/// The model operator over `feats`. `unused` features get zero weights or
/// never appear in a split.
fn random_model(rng: &mut impl Rng, kind: ModelKind, feats: &[Feat], unused: &[usize]) -> MlOperator {
    let live: Vec<(usize, Feat)> = feats
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| !unused.contains(i))
        .collect();
    match kind {
        ModelKind::Linear => {
            // An exact share of zero weights, kept within 10-90%.
            let n = feats.len();
            let lo = ((n as f64 * 0.1).ceil() as usize).max(1);
            let hi = ((n as f64 * 0.9).floor() as usize).min(n.saturating_sub(1)).max(lo);
            let want = ((rng.gen_range(0.1..=0.9) * n as f64).round() as usize).clamp(lo, hi);
            let mut zero: Vec<usize> = unused.to_vec();
            let mut rest: Vec<usize> = (0..n).filter(|i| !unused.contains(i)).collect();
            rest.shuffle(rng);
            zero.extend(rest.into_iter().take(want.saturating_sub(unused.len())));
            let weights = (0..n)
                .map(|i| {
                    if zero.contains(&i) {
                        vec![0.0]
                    } else {
                        vec![nonzero(rng)]
                    }
                })
                .collect();
            let post = if rng.gen_bool(0.5) {
                PostTransform::Logistic
            } else {
                PostTransform::None
            };
            MlOperator::LinearModel {
                weights,
                intercepts: vec![round2(rng.gen_range(-1.0..1.0))],
                post,
            }
        }
        ModelKind::Trees => {
            let n_trees = if rng.gen_bool(0.3) {
                rng.gen_range(1..=50)
            } else {
                rng.gen_range(1..=8)
            };
            let max_depth = rng.gen_range(1..=12);
            let (aggregate, task, post) = match rng.gen_range(0..4) {
                0 => (Aggregate::Vote, Task::BinaryClassification, PostTransform::None),
                1 => (Aggregate::Average, Task::BinaryClassification, PostTransform::Logistic),
                2 => (Aggregate::Sum, Task::Regression, PostTransform::None),
                _ => (Aggregate::Average, Task::Regression, PostTransform::None),
            };
            let leaf_len = if aggregate == Aggregate::Vote { 2 } else { 1 };
            let trees = (0..n_trees).map(|_| random_tree(rng, &live, max_depth, leaf_len)).collect();
            MlOperator::TreeEnsemble {
                trees,
                aggregate,
                task,
                post,
            }
        }
    }
}

/// One random case. Every third case joins a second table; every fourth
/// carries range partitions on `t.x0`.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if seed % 2 == 0 { ModelKind::Trees } else { ModelKind::Linear };
    let n_num = rng.gen_range(2..=6);
    let n_int = rng.gen_range(0..=2);
    let n_str = rng.gen_range(0..=2);
    let joined = seed % 3 == 1;
    let partitioned = seed % 4 == 3;

    // Data for t (and u).
    let mut t_cols: Vec<(String, DType, ColumnData)> = vec![(
        "id".into(),
        DType::Int64,
        ColumnData::Int((0..ROWS as i64).collect()),
    )];
    let mut u_cols: Vec<(String, DType, ColumnData)> = vec![(
        "id".into(),
        DType::Int64,
        ColumnData::Int((0..ROWS as i64).rev().collect()),
    )];
    let mut num_inputs = Vec::new();
    for i in 0..n_num {
        let name = format!("x{i}");
        let data: Vec<f64> = (0..ROWS).map(|_| round2(rng.gen_range(-10.0..10.0))).collect();
        if joined && i % 2 == 1 {
            u_cols.push((name.clone(), DType::Float64, ColumnData::Float(data)));
            num_inputs.push(("u", name));
        } else {
            t_cols.push((name.clone(), DType::Float64, ColumnData::Float(data)));
            num_inputs.push(("t", name));
        }
    }
    let mut int_inputs = Vec::new();
    for i in 0..n_int {
        let card = rng.gen_range(2..=20);
        let name = format!("c{i}");
        // One code past the last category shows up as an unseen value.
        let data: Vec<i64> = (0..ROWS).map(|_| rng.gen_range(0..=card)).collect();
        t_cols.push((name.clone(), DType::Int64, ColumnData::Int(data)));
        int_inputs.push((name, card));
    }
    let mut str_inputs = Vec::new();
    for i in 0..n_str {
        let card = rng.gen_range(2..=20);
        let name = format!("s{i}");
        let data: Vec<String> = (0..ROWS).map(|_| format!("v{}", rng.gen_range(0..=card))).collect();
        t_cols.push((name.clone(), DType::String, ColumnData::Str(data)));
        str_inputs.push((name, card));
    }
    // An unused column, so pushdown has something to drop besides features.
    t_cols.push((
        "note".into(),
        DType::String,
        ColumnData::Str((0..ROWS).map(|r| format!("n{}", r % 7)).collect()),
    ));

    // Pipeline.
    let mut b = PipelineBuilder::new(&format!("case{seed}"));
    let mut branches = Vec::new();
    let mut feats = Vec::new();
    for (_, name) in &num_inputs {
        b = b.input(name, DType::Float64);
    }
    let nums: Vec<Source> = num_inputs.iter().map(|(_, n)| Source::input(n)).collect();
    let mut offsets = Vec::new();
    let mut scales = Vec::new();
    for _ in 0..n_num {
        let (o, s) = match rng.gen_range(0..3) {
            0 => (0.0, 1.0),
            1 => (round2(rng.gen_range(-5.0..5.0)), 1.0),
            _ => (round2(rng.gen_range(-5.0..5.0)), round2(rng.gen_range(0.1..3.0))),
        };
        offsets.push(o);
        scales.push(s);
    }
    let scaled: Vec<Feat> = offsets
        .iter()
        .zip(&scales)
        .map(|(o, s)| Feat::Range((-10.0 - o) * s, (10.0 - o) * s))
        .collect();
    b = b.node(
        "scaler",
        MlOperator::Scaler {
            offsets: offsets.clone(),
            scales: scales.clone(),
        },
        nums,
    );
    if rng.gen_bool(0.2) {
        let norm = *[Norm::L1, Norm::L2, Norm::Max].choose(&mut rng).unwrap();
        b = b.node("normalizer", MlOperator::Normalizer { norm }, vec![Source::node("scaler")]);
        branches.push(Source::node("normalizer"));
        feats.extend(std::iter::repeat(Feat::Range(-1.0, 1.0)).take(n_num));
    } else {
        branches.push(Source::node("scaler"));
        feats.extend(scaled);
    }
    for (name, card) in &int_inputs {
        b = b.input(name, DType::Int64);
        if rng.gen_bool(0.75) {
            let categories = vec![(0..*card).map(Value::Int).collect()];
            b = b.node(&format!("{name}_ohe"), MlOperator::OneHotEncoder { categories }, vec![Source::input(name)]);
            branches.push(Source::node(&format!("{name}_ohe")));
            feats.extend(std::iter::repeat(Feat::Discrete(0, 1)).take(*card as usize));
        } else {
            let mapping = (0..*card).map(|k| (Value::Int(k), (card - 1 - k))).collect();
            b = b.node(
                &format!("{name}_le"),
                MlOperator::LabelEncoder { mapping, default: -1 },
                vec![Source::input(name)],
            );
            branches.push(Source::node(&format!("{name}_le")));
            feats.push(Feat::Discrete(-1, card - 1));
        }
    }
    for (name, card) in &str_inputs {
        b = b.input(name, DType::String);
        if rng.gen_bool(0.75) {
            let categories = vec![(0..*card).map(|k| Value::Str(format!("v{k}"))).collect()];
            b = b.node(&format!("{name}_ohe"), MlOperator::OneHotEncoder { categories }, vec![Source::input(name)]);
            branches.push(Source::node(&format!("{name}_ohe")));
            feats.extend(std::iter::repeat(Feat::Discrete(0, 1)).take(*card as usize));
        } else {
            let mapping = (0..*card).map(|k| (Value::Str(format!("v{k}")), k)).collect();
            b = b.node(
                &format!("{name}_le"),
                MlOperator::LabelEncoder { mapping, default: -1 },
                vec![Source::input(name)],
            );
            branches.push(Source::node(&format!("{name}_le")));
            feats.push(Feat::Discrete(-1, card - 1));
        }
    }
    let arity = branches.len();
    b = b.node("concat", MlOperator::Concat { arity }, branches);
    let mut model_src = Source::node("concat");
    if rng.gen_bool(0.25) && feats.len() > 1 {
        let mut indices: Vec<usize> = (0..feats.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(rng.gen_range(2..=feats.len()));
        feats = indices.iter().map(|&i| feats[i]).collect();
        b = b.node("extract", MlOperator::FeatureExtractor { indices }, vec![model_src]);
        model_src = Source::node("extract");
    }
    let model = random_model(&mut rng, kind, &feats, &[]);
    let pipeline = b.node("model", model, vec![model_src]).model_outputs("model").build();

    // Predicates: a range on a numeric column and an equality on a category.
    let mut preds = Vec::new();
    if rng.gen_bool(0.6) {
        let (tbl, name) = &num_inputs[rng.gen_range(0..num_inputs.len())];
        let op = *[">", ">=", "<", "<="].choose(&mut rng).unwrap();
        preds.push(format!("{tbl}.{name} {op} {}", round2(rng.gen_range(-8.0..8.0))));
    }
    if let Some((name, card)) = int_inputs.first() {
        if rng.gen_bool(0.5) {
            preds.push(format!("t.{name} = {}", rng.gen_range(0..*card)));
        }
    }
    if let Some((name, card)) = str_inputs.first() {
        if rng.gen_bool(0.5) {
            preds.push(format!("t.{name} = 'v{}'", rng.gen_range(0..*card)));
        }
    }
    let where_clause = if preds.is_empty() {
        String::new()
    } else {
        format!(" WHERE {}", preds.join(" AND "))
    };
    let query = if joined {
        format!("SELECT t.id, PREDICT(m.json, *) AS pred FROM t JOIN u ON t.id = u.id{where_clause}")
    } else {
        format!(
            "SELECT t.id, p.label, p.score FROM PREDICT(MODEL = m.json, DATA = t) WITH (label float, score float) AS p{where_clause}"
        )
    };

    let mut catalog = Catalog::default();
    let t_schema: Vec<(String, DType)> = t_cols.iter().map(|(n, d, _)| (n.clone(), *d)).collect();
    catalog
        .tables
        .insert("t".into(), schema(&t_schema, partitioned.then_some("x0")));
    let mut tables = BTreeMap::new();
    tables.insert("t".to_string(), table(t_cols));
    if joined {
        let u_schema: Vec<(String, DType)> = u_cols.iter().map(|(n, d, _)| (n.clone(), *d)).collect();
        catalog.tables.insert("u".into(), schema(&u_schema, None));
        tables.insert("u".to_string(), table(u_cols));
    }
    let mut stats = exact_stats(&tables);
    if partitioned {
        let x0 = tables["t"].column("x0").unwrap().to_f64().unwrap();
        let parts = value_partitions(&x0, rng.gen_range(2..=6));
        stats.tables.get_mut("t").unwrap().get_mut("x0").unwrap().partitions = parts;
    }
    Case {
        seed,
        kind,
        pipeline,
        catalog,
        query,
        tables,
        stats,
    }
}

/// Splits values into `k` buckets of equal value width and reports each
/// non-empty bucket's exact min/max. Buckets never overlap.
pub fn value_partitions(xs: &[f64], k: usize) -> Vec<PartitionStats> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / k as f64;
    let mut buckets: Vec<Vec<f64>> = vec![vec![]; k];
    for &x in xs {
        let b = if width > 0.0 { (((x - lo) / width) as usize).min(k - 1) } else { 0 };
        buckets[b].push(x);
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(id, b)| PartitionStats {
            id: id as i64,
            min: b.iter().copied().fold(f64::INFINITY, f64::min),
            max: b.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            rows: b.len() as u64,
        })
        .collect()
}

pub fn corpus() -> Vec<Case> {
    (0..CORPUS_SIZE).map(random_case).collect()
}

/// Label agreement (percent) and the largest relative score deviation of
/// `candidate` against `baseline`.
pub fn agreement(plan: &Plan, baseline: &Table, candidate: &Table) -> (f64, f64) {
    let (labels, scores) = output_columns(plan);
    let c = compare_results(baseline, candidate, &labels, &scores);
    (c.agreement, c.max_score_delta)
}

/// A case whose model ignores exactly `unused` of its `n` numeric inputs.
/// Every input goes straight into the Concat, so input `i` is feature `i`.
pub fn unused_feature_case(seed: u64, n: usize, unused: usize, kind: ModelKind) -> (Case, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    names.shuffle(&mut rng);
    let dead: Vec<String> = names[..unused].to_vec();
    names.sort_by_key(|s| s[1..].parse::<usize>().unwrap());
    let dead_idx: Vec<usize> = (0..n).filter(|i| dead.contains(&format!("x{i}"))).collect();
    let feats = vec![Feat::Range(-10.0, 10.0); n];
    let mut model = random_model(&mut rng, kind, &feats, &dead_idx);
    // Force every live feature into use so only the dead ones are removable.
    match &mut model {
        MlOperator::LinearModel { weights, .. } => {
            for (i, w) in weights.iter_mut().enumerate() {
                if !dead_idx.contains(&i) && w[0] == 0.0 {
                    w[0] = 1.0;
                }
            }
        }
        MlOperator::TreeEnsemble { trees, .. } => {
            let leaf_len = trees[0].leaf_value(trees[0].leaves()[0]).len();
            for i in (0..n).filter(|i| !dead_idx.contains(i)) {
                let leaf = || DecisionTree::leaf(vec![0.5; leaf_len]);
                trees.push(DecisionTree::split(i, Cmp::Gt, 0.0, leaf(), DecisionTree::leaf(vec![-0.5; leaf_len])));
            }
        }
        _ => unreachable!(),
    }
    let mut b = PipelineBuilder::new("wide");
    for name in &names {
        b = b.input(name, DType::Float64);
    }
    let pipeline = b
        .node(
            "concat",
            MlOperator::Concat { arity: n },
            names.iter().map(|x| Source::input(x)).collect(),
        )
        .node("model", model, vec![Source::node("concat")])
        .model_outputs("model")
        .build();
    let mut cols = vec![("id".to_string(), DType::Int64, ColumnData::Int((0..100).collect()))];
    for name in &names {
        let data = (0..100).map(|_| round2(rng.gen_range(-10.0..10.0))).collect();
        cols.push((name.clone(), DType::Float64, ColumnData::Float(data)));
    }
    let mut catalog = Catalog::default();
    let sch: Vec<(String, DType)> = cols.iter().map(|(n, d, _)| (n.clone(), *d)).collect();
    catalog.tables.insert("t".into(), schema(&sch, None));
    let mut tables = BTreeMap::new();
    tables.insert("t".to_string(), table(cols));
    let stats = exact_stats(&tables);
    let case = Case {
        seed,
        kind,
        pipeline,
        catalog,
        query: "SELECT t.id, PREDICT(m.json, *) AS pred FROM t".into(),
        tables,
        stats,
    };
    (case, dead)
}

/// One-line description of what the corpus covers.
pub fn describe(cases: &[Case]) -> String {
    let mut trees = 0;
    let mut max_trees = 0;
    let mut max_depth = 0;
    let mut ohe_card = (usize::MAX, 0);
    let mut zero_frac = (f64::MAX, 0.0f64);
    for c in cases {
        for n in &c.pipeline.nodes {
            match &n.op {
                MlOperator::TreeEnsemble { trees: ts, .. } => {
                    trees += 1;
                    max_trees = max_trees.max(ts.len());
                    max_depth = max_depth.max(ts.iter().map(DecisionTree::depth).max().unwrap_or(0));
                }
                MlOperator::LinearModel { weights, .. } => {
                    let f = weights.iter().filter(|w| w[0] == 0.0).count() as f64 / weights.len() as f64;
                    zero_frac = (zero_frac.0.min(f), zero_frac.1.max(f));
                }
                MlOperator::OneHotEncoder { categories } => {
                    ohe_card = (ohe_card.0.min(categories[0].len()), ohe_card.1.max(categories[0].len()));
                }
                _ => {}
            }
        }
    }
    let joined = cases.iter().filter(|c| c.tables.len() > 1).count();
    let partitioned = cases
        .iter()
        .filter(|c| c.catalog.tables["t"].partition_column.is_some())
        .count();
    format!(
        "{} cases x {ROWS} rows: {trees} tree ensembles (up to {max_trees} trees, depth {max_depth}), {} linear (zero weights {:.0}%-{:.0}%), one-hot cardinality {}-{}, {joined} joins, {partitioned} partitioned",
        cases.len(),
        cases.len() - trees,
        zero_frac.0 * 100.0,
        zero_frac.1 * 100.0,
        ohe_card.0,
        ohe_card.1,
    )
}
