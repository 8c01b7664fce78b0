//! End-to-end flow shared by the command-line tool and the tests: load
//! inputs, build and optimize the plan, execute, compare results.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::executor::{execute_plan, load_csv, run_partitioned, Field, Table};
use crate::frontend::{normalize_predict, parse_query, Catalog};
use crate::ir::{build_ir, Plan, PlanOp};
use crate::optimizer::{optimize, PartitionSelector, PassSet, Stats};
use crate::pipeline::{load_pipeline, ModelPipeline, OutPort};
use crate::strategy::{apply_transform, extract_stats, StrategySpec, TransformChoice};
use crate::Error;

pub fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| Error::Usage(format!("{}: not UTF-8: {e}", path.display())))
}

pub fn load_catalog(path: &Path) -> Result<Catalog, Error> {
    Ok(Catalog::from_json(&read_text(path)?)?)
}

pub fn load_model(path: &Path) -> Result<ModelPipeline, Error> {
    Ok(load_pipeline(&read_file(path)?)?)
}

pub fn load_stats(path: &Path) -> Result<Stats, Error> {
    Ok(Stats::from_json(&read_text(path)?)?)
}

/// Loads `<dir>/<table>.csv` for every catalog table.
pub fn load_tables(dir: &Path, catalog: &Catalog) -> Result<BTreeMap<String, Table>, Error> {
    let mut out = BTreeMap::new();
    for (name, schema) in &catalog.tables {
        let fields: Vec<Field> = schema.columns.iter().map(|c| Field::new(c.name.clone(), c.dtype)).collect();
        out.insert(name.clone(), load_csv(&dir.join(format!("{name}.csv")), &fields)?);
    }
    Ok(out)
}

/// Parses, binds and lowers a prediction query.
pub fn build_plan(query: &str, pipeline: &ModelPipeline, catalog: &Catalog) -> Result<Plan, Error> {
    let ast = normalize_predict(&parse_query(query, catalog)?)?;
    Ok(build_ir(&ast, pipeline, catalog)?)
}

/// Which optimizations run and how the physical transform is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub passes: PassSet,
    pub ml2sql: bool,
    pub ml2dnn: bool,
    pub strategy: StrategySpec,
    pub has_gpu: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            passes: PassSet::ALL,
            ml2sql: true,
            ml2dnn: true,
            strategy: StrategySpec::Rule,
            has_gpu: false,
        }
    }
}

impl OptimizeConfig {
    /// No logical passes and no physical transform.
    pub fn none() -> Self {
        OptimizeConfig {
            passes: PassSet::NONE,
            ml2sql: false,
            ml2dnn: false,
            strategy: StrategySpec::None,
            has_gpu: false,
        }
    }

    /// Reads a `--passes` list: logical pass names plus `ml2sql`/`ml2dnn`.
    pub fn set_passes(&mut self, list: &str) -> Result<(), Error> {
        self.passes = list.parse().map_err(Error::Usage)?;
        let items: Vec<&str> = list.split(',').map(str::trim).collect();
        let all = items.contains(&"all");
        self.ml2sql = all || items.contains(&"ml2sql");
        self.ml2dnn = all || items.contains(&"ml2dnn");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedPlan {
    pub selector: PartitionSelector,
    pub plan: Plan,
    pub choice: Option<TransformChoice>,
}

/// Logical passes in their fixed order, then the strategy's transform on
/// every resulting plan.
pub fn optimize_plan(
    plan: &Plan,
    cfg: &OptimizeConfig,
    stats: Option<&Stats>,
    catalog: &Catalog,
) -> Result<Vec<OptimizedPlan>, Error> {
    let plans = optimize(plan, cfg.passes, stats, catalog)?;
    Ok(plans
        .into_iter()
        .map(|(selector, p)| {
            let Some(seg) = p.ml_segment() else {
                return OptimizedPlan {
                    selector,
                    plan: p,
                    choice: None,
                };
            };
            let choice = cfg.strategy.choose(&extract_stats(&seg), cfg.has_gpu);
            let plan = apply_transform(&p, &choice, (cfg.ml2sql, cfg.ml2dnn));
            OptimizedPlan {
                selector,
                plan,
                choice: Some(choice),
            }
        })
        .collect())
}

/// Executes one or several partition plans.
pub fn run_plans(plans: &[OptimizedPlan], tables: &BTreeMap<String, Table>) -> Result<Table, Error> {
    let pairs: Vec<(PartitionSelector, Plan)> = plans.iter().map(|p| (p.selector.clone(), p.plan.clone())).collect();
    Ok(run_partitioned(&pairs, tables)?)
}

pub fn run_plan(plan: &Plan, tables: &BTreeMap<String, Table>) -> Result<Table, Error> {
    Ok(execute_plan(plan, tables)?)
}

/// Names of the model-output columns of a plan, split into labels and scores.
pub fn output_columns(plan: &Plan) -> (Vec<String>, Vec<String>) {
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for n in plan.nodes.values() {
        if let PlanOp::PredictBoundary { outputs } = &n.op {
            for o in outputs {
                match o.port {
                    OutPort::Score => scores.push(o.name.clone()),
                    _ => labels.push(o.name.clone()),
                }
            }
        }
    }
    (labels, scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline_rows: usize,
    pub candidate_rows: usize,
    /// Rows whose keys match and whose labels are equal.
    pub agreeing_rows: usize,
    /// Percentage of agreeing rows over the larger row count; 100 when both are empty.
    pub agreement: f64,
    /// Largest `|a - b| / max(1, |a|)` over matched score cells.
    pub max_score_delta: f64,
}

fn row_key(t: &Table, r: usize, skip: &[usize]) -> String {
    let mut k = String::new();
    for (i, c) in t.columns.iter().enumerate() {
        if !skip.contains(&i) {
            k.push_str(&c.render(r));
            k.push('\u{1f}');
        }
    }
    k
}

/// Matches rows of two results by their non-model columns and compares the
/// model outputs. Row order does not matter.
pub fn compare_results(baseline: &Table, candidate: &Table, labels: &[String], scores: &[String]) -> Comparison {
    let idx = |t: &Table, names: &[String]| -> Vec<usize> { names.iter().filter_map(|n| t.index_of(n)).collect() };
    let (bl, bs) = (idx(baseline, labels), idx(baseline, scores));
    let (cl, cs) = (idx(candidate, labels), idx(candidate, scores));
    let bskip: Vec<usize> = bl.iter().chain(&bs).copied().collect();
    let cskip: Vec<usize> = cl.iter().chain(&cs).copied().collect();
    let mut pending: HashMap<String, Vec<usize>> = HashMap::new();
    for r in (0..baseline.rows).rev() {
        pending.entry(row_key(baseline, r, &bskip)).or_default().push(r);
    }
    let mut agreeing = 0;
    let mut max_delta: f64 = 0.0;
    for r in 0..candidate.rows {
        let Some(b) = pending.get_mut(&row_key(candidate, r, &cskip)).and_then(Vec::pop) else {
            continue;
        };
        let same = bl
            .iter()
            .zip(&cl)
            .all(|(&i, &j)| baseline.columns[i].f64_at(b) == candidate.columns[j].f64_at(r));
        if same {
            agreeing += 1;
        }
        for (&i, &j) in bs.iter().zip(&cs) {
            if let (Some(a), Some(c)) = (baseline.columns[i].f64_at(b), candidate.columns[j].f64_at(r)) {
                max_delta = max_delta.max((a - c).abs() / a.abs().max(1.0));
            }
        }
    }
    let denom = baseline.rows.max(candidate.rows);
    Comparison {
        baseline_rows: baseline.rows,
        candidate_rows: candidate.rows,
        agreeing_rows: agreeing,
        agreement: if denom == 0 { 100.0 } else { 100.0 * agreeing as f64 / denom as f64 },
        max_score_delta: max_delta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ColumnData;
    use crate::value::DType;

    fn result(ids: &[i64], labels: &[f64], scores: &[f64]) -> Table {
        Table::new(
            vec![("id", DType::Int64), ("l", DType::Float64), ("s", DType::Float64)],
            vec![
                ColumnData::Int(ids.to_vec()),
                ColumnData::Float(labels.to_vec()),
                ColumnData::Float(scores.to_vec()),
            ],
        )
        .unwrap()
    }

    fn cmp(a: &Table, b: &Table) -> Comparison {
        compare_results(a, b, &["l".into()], &["s".into()])
    }

    #[test]
    fn row_order_does_not_matter() {
        let a = result(&[1, 2, 3], &[1.0, 0.0, 1.0], &[0.9, 0.1, 0.8]);
        let b = result(&[3, 1, 2], &[1.0, 1.0, 0.0], &[0.8, 0.9, 0.1]);
        let c = cmp(&a, &b);
        assert_eq!(c.agreeing_rows, 3);
        assert_eq!(c.agreement, 100.0);
        assert_eq!(c.max_score_delta, 0.0);
    }

    #[test]
    fn disagreements_and_missing_rows_count_against() {
        let a = result(&[1, 2, 3, 4], &[1.0, 0.0, 1.0, 0.0], &[0.9, 0.1, 0.8, 0.2]);
        let b = result(&[1, 2, 3], &[1.0, 1.0, 1.0], &[0.9, 0.6, 0.8]);
        let c = cmp(&a, &b);
        assert_eq!((c.baseline_rows, c.candidate_rows, c.agreeing_rows), (4, 3, 2));
        assert_eq!(c.agreement, 50.0);
        assert!((c.max_score_delta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_keys_pair_up_once() {
        let a = result(&[7, 7], &[1.0, 0.0], &[0.0, 0.0]);
        let b = result(&[7], &[1.0], &[0.0]);
        assert_eq!(cmp(&a, &b).agreeing_rows, 1);
        assert_eq!(cmp(&result(&[], &[], &[]), &result(&[], &[], &[])).agreement, 100.0);
    }

    #[test]
    fn pass_lists_set_physical_flags() {
        let mut cfg = OptimizeConfig::none();
        cfg.set_passes("pred_prune,ml2sql").unwrap();
        assert!(cfg.passes.pred_prune && !cfg.passes.proj_pushdown);
        assert!(cfg.ml2sql && !cfg.ml2dnn);
        assert!(cfg.set_passes("bogus").is_err());
    }
}
