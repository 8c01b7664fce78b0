//! Executes plans over in-memory tables.

use std::collections::{BTreeMap, HashMap};

use super::kernel::eval_operator;
use super::table::{ColumnData, Field, Table};
use crate::ir::{NodeId, Plan, PlanOp, Port, PortRef};
use crate::ml2dnn::{run_program, Tensor};
use crate::ml2sql::{BinOp, Func, SqlExpr};
use crate::optimizer::PartitionSelector;
use crate::pipeline::OutPort;
use crate::value::{DType, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("node {node}: {message}")]
    Node { node: NodeId, message: String },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("partitions do not cover the data: {0}")]
    Coverage(String),
}

fn node_err(node: NodeId, message: impl Into<String>) -> ExecError {
    ExecError::Node {
        node,
        message: message.into(),
    }
}

/// Values produced by one node.
enum Output {
    Rel(Table),
    Vec(Vec<(OutPort, Vec<ColumnData>)>),
}

/// Evaluates a scalar expression. Column names are resolved by `lookup`.
pub fn eval_expr(e: &SqlExpr, lookup: &impl Fn(&str) -> Option<Value>) -> Result<Value, String> {
    let num = |e: &SqlExpr| -> Result<f64, String> {
        let v = eval_expr(e, lookup)?;
        v.as_f64().ok_or_else(|| format!("'{}' is not numeric", e.render()))
    };
    Ok(match e {
        SqlExpr::Column(c) => lookup(c).ok_or_else(|| format!("unknown column '{c}'"))?,
        SqlExpr::Indexed { name, index } => return Err(format!("unbound feature {name}[{index}]")),
        SqlExpr::Number(v) => Value::Float(*v),
        SqlExpr::Str(s) => Value::Str(s.clone()),
        SqlExpr::Binary { op, lhs, rhs } => {
            let (a, b) = (num(lhs)?, num(rhs)?);
            Value::Float(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            })
        }
        SqlExpr::Neg(x) => Value::Float(-num(x)?),
        SqlExpr::Cmp { .. } | SqlExpr::And(_) => Value::Float(if eval_cond(e, lookup)? { 1.0 } else { 0.0 }),
        SqlExpr::Case { whens, otherwise } => {
            for (c, v) in whens {
                if eval_cond(c, lookup)? {
                    return eval_expr(v, lookup);
                }
            }
            eval_expr(otherwise, lookup)?
        }
        SqlExpr::Func { func, args } => {
            let xs = args.iter().map(num).collect::<Result<Vec<_>, _>>()?;
            let first = *xs.first().ok_or_else(|| format!("{} needs an argument", func.name()))?;
            Value::Float(match func {
                Func::Exp => first.exp(),
                Func::Abs => first.abs(),
                Func::Sqrt => first.sqrt(),
                Func::Greatest => xs[1..].iter().fold(first, |m, x| m.max(*x)),
            })
        }
    })
}

fn eval_cond(e: &SqlExpr, lookup: &impl Fn(&str) -> Option<Value>) -> Result<bool, String> {
    match e {
        SqlExpr::Cmp { op, lhs, rhs } => Ok(op.eval(&eval_expr(lhs, lookup)?, &eval_expr(rhs, lookup)?)),
        SqlExpr::And(parts) => {
            for p in parts {
                if !eval_cond(p, lookup)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        other => Ok(eval_expr(other, lookup)?.as_f64().is_some_and(|v| v != 0.0)),
    }
}

/// Evaluates `e` for every row of `t` into a column of `dtype`.
pub fn eval_column(e: &SqlExpr, t: &Table, dtype: DType) -> Result<ColumnData, String> {
    let index: HashMap<&str, usize> = t.fields.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    let mut out = ColumnData::empty(dtype);
    for r in 0..t.rows {
        let lookup = |c: &str| index.get(c).map(|&i| t.columns[i].get(r));
        let v = eval_expr(e, &lookup)?;
        match (&mut out, v) {
            (ColumnData::Float(xs), v) => xs.push(v.as_f64().ok_or("string value in a numeric column")?),
            (ColumnData::Int(xs), Value::Int(i)) => xs.push(i),
            (ColumnData::Int(xs), Value::Float(f)) => xs.push(f as i64),
            (ColumnData::Str(xs), Value::Str(s)) => xs.push(s),
            (_, v) => return Err(format!("value {v} does not fit {dtype}")),
        }
    }
    Ok(out)
}

#[derive(PartialEq, Eq, Hash)]
enum JoinKey {
    Int(i64),
    Bits(u64),
    Str(String),
}

fn join_key(v: Value) -> JoinKey {
    match v {
        Value::Int(i) => JoinKey::Int(i),
        Value::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => JoinKey::Int(f as i64),
        Value::Float(f) => JoinKey::Bits(f.to_bits()),
        Value::Str(s) => JoinKey::Str(s),
    }
}

fn hash_join(l: &Table, r: &Table, lk: &str, rk: &str) -> Option<Table> {
    let lc = l.column(lk)?;
    let rc = r.column(rk)?;
    let mut index: HashMap<JoinKey, Vec<usize>> = HashMap::new();
    for j in 0..r.rows {
        index.entry(join_key(rc.get(j))).or_default().push(j);
    }
    let (mut li, mut ri) = (Vec::new(), Vec::new());
    for i in 0..l.rows {
        if let Some(js) = index.get(&join_key(lc.get(i))) {
            for &j in js {
                li.push(i);
                ri.push(j);
            }
        }
    }
    let (lt, rt) = (l.take(&li), r.take(&ri));
    Some(Table {
        fields: lt.fields.into_iter().chain(rt.fields).collect(),
        columns: lt.columns.into_iter().chain(rt.columns).collect(),
        rows: li.len(),
    })
}

fn vector_input<'a>(
    id: NodeId,
    r: &PortRef,
    done: &'a BTreeMap<NodeId, Output>,
) -> Result<Vec<&'a ColumnData>, ExecError> {
    match (&r.port, &done[&r.node]) {
        (Port::Column(c), Output::Rel(t)) => t
            .column(c)
            .map(|c| vec![c])
            .ok_or_else(|| node_err(id, format!("input {r}: no column '{c}'"))),
        (p, Output::Vec(ports)) => {
            let want = p.as_out_port().ok_or_else(|| node_err(id, format!("bad input {r}")))?;
            ports
                .iter()
                .find(|(port, _)| *port == want)
                .map(|(_, cols)| cols.iter().collect())
                .ok_or_else(|| node_err(id, format!("input {r}: no such port")))
        }
        _ => Err(node_err(id, format!("input {r} does not carry a vector"))),
    }
}

fn relation_input<'a>(id: NodeId, r: &PortRef, done: &'a BTreeMap<NodeId, Output>) -> Result<&'a Table, ExecError> {
    match &done[&r.node] {
        Output::Rel(t) => Ok(t),
        Output::Vec(_) => Err(node_err(id, format!("input {r} is not a relation"))),
    }
}

fn single(id: NodeId, cols: Vec<&ColumnData>, what: &str) -> Result<ColumnData, ExecError> {
    match cols.as_slice() {
        [c] => Ok(match c.to_f64() {
            Some(v) => ColumnData::Float(v),
            None => return Err(node_err(id, format!("{what} is not numeric"))),
        }),
        _ => Err(node_err(id, format!("{what} must be one column"))),
    }
}

/// Runs `plan` over `tables` (keyed by table name) and returns the root's rows.
pub fn execute_plan(plan: &Plan, tables: &BTreeMap<String, Table>) -> Result<Table, ExecError> {
    let order = exec_order(plan)?;
    let mut done: BTreeMap<NodeId, Output> = BTreeMap::new();
    for id in order {
        let n = plan.node(id);
        let out = match &n.op {
            PlanOp::Scan { table, alias, columns } => {
                let t = tables
                    .get(table)
                    .ok_or_else(|| node_err(id, format!("no data for table '{table}'")))?;
                let mut fields = Vec::with_capacity(columns.len());
                let mut cols = Vec::with_capacity(columns.len());
                for c in columns {
                    let i = t
                        .index_of(&c.name)
                        .ok_or_else(|| node_err(id, format!("table '{table}' has no column '{}'", c.name)))?;
                    if t.fields[i].dtype != c.dtype {
                        return Err(node_err(
                            id,
                            format!("column '{table}.{}' is {} but the plan expects {}", c.name, t.fields[i].dtype, c.dtype),
                        ));
                    }
                    fields.push(Field::new(format!("{alias}.{}", c.name), c.dtype));
                    cols.push(t.columns[i].clone());
                }
                Output::Rel(Table {
                    fields,
                    columns: cols,
                    rows: t.rows,
                })
            }
            PlanOp::Project { columns } => {
                let t = relation_input(id, &n.inputs[0], &done)?;
                let mut fields = Vec::new();
                let mut cols = Vec::new();
                for c in columns {
                    let i = t.index_of(c).ok_or_else(|| node_err(id, format!("no column '{c}'")))?;
                    fields.push(t.fields[i].clone());
                    cols.push(t.columns[i].clone());
                }
                Output::Rel(Table {
                    fields,
                    columns: cols,
                    rows: t.rows,
                })
            }
            PlanOp::Filter { predicates } => {
                let t = relation_input(id, &n.inputs[0], &done)?;
                let mut idx = Vec::with_capacity(predicates.len());
                for p in predicates {
                    idx.push(t.index_of(&p.column).ok_or_else(|| node_err(id, format!("no column '{}'", p.column)))?);
                }
                let keep: Vec<usize> = (0..t.rows)
                    .filter(|&r| {
                        predicates
                            .iter()
                            .zip(&idx)
                            .all(|(p, &i)| p.op.eval(&t.columns[i].get(r), &p.literal))
                    })
                    .collect();
                Output::Rel(t.take(&keep))
            }
            PlanOp::Join { left, right } => {
                let l = relation_input(id, &n.inputs[0], &done)?;
                let r = relation_input(id, &n.inputs[1], &done)?;
                Output::Rel(hash_join(l, r, left, right).ok_or_else(|| node_err(id, "join key missing"))?)
            }
            PlanOp::Ml(op) => {
                let mut inputs = Vec::new();
                for r in &n.inputs {
                    inputs.extend(vector_input(id, r, &done)?);
                }
                let rows = match inputs.first() {
                    Some(c) => c.len(),
                    None => plan_rows(plan, &done).ok_or_else(|| node_err(id, "cannot size a constant"))?,
                };
                Output::Vec(eval_operator(op, &inputs, rows).map_err(|e| node_err(id, e.0))?)
            }
            PlanOp::Tensor(prog) => {
                let mut inputs = Vec::new();
                for r in &n.inputs {
                    inputs.extend(vector_input(id, r, &done)?);
                }
                // A model left with no features still predicts one value per row.
                let rows = match inputs.first() {
                    Some(c) => c.len(),
                    None => plan_rows(plan, &done).unwrap_or(0),
                };
                let cols: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|c| c.to_f64().ok_or_else(|| node_err(id, "tensor input is not numeric")))
                    .collect::<Result<_, _>>()?;
                let mut data = Vec::with_capacity(rows * cols.len());
                for r in 0..rows {
                    data.extend(cols.iter().map(|c| c[r]));
                }
                let batch = Tensor::new(rows, cols.len(), data).map_err(|e| node_err(id, e.to_string()))?;
                let (labels, scores) = run_program(prog, &batch).map_err(|e| node_err(id, e.to_string()))?;
                Output::Vec(vec![
                    (OutPort::Label, vec![ColumnData::Float(labels)]),
                    (OutPort::Score, vec![ColumnData::Float(scores)]),
                ])
            }
            PlanOp::PredictBoundary { outputs } => {
                let mut t = relation_input(id, &n.inputs[0], &done)?.clone();
                let label = single(id, vector_input(id, &n.inputs[1], &done)?, "label")?;
                let score = match n.inputs.get(2) {
                    Some(r) => Some(single(id, vector_input(id, r, &done)?, "score")?),
                    None => None,
                };
                if label.len() != t.rows {
                    return Err(node_err(id, format!("{} predictions for {} rows", label.len(), t.rows)));
                }
                for o in outputs {
                    let col = match o.port {
                        OutPort::Score => score.clone().ok_or_else(|| node_err(id, "no score input"))?,
                        _ => label.clone(),
                    };
                    t.push_column(Field::new(o.name.clone(), DType::Float64), col);
                }
                Output::Rel(t)
            }
            PlanOp::Compute { bindings } => {
                let mut t = relation_input(id, &n.inputs[0], &done)?.clone();
                for b in bindings {
                    let col = eval_column(&b.expr, &t, b.dtype).map_err(|e| node_err(id, format!("{}: {e}", b.name)))?;
                    t.push_column(Field::new(b.name.clone(), b.dtype), col);
                }
                Output::Rel(t)
            }
            PlanOp::Empty { columns } => Output::Rel(Table::empty(columns.clone())),
        };
        done.insert(id, out);
    }
    match done.remove(&plan.root) {
        Some(Output::Rel(t)) => Ok(t),
        _ => Err(ExecError::Plan("the root does not produce a relation".into())),
    }
}

/// Topological order that runs relational nodes as early as possible, so
/// the relation feeding the models is known before input-less operators.
fn exec_order(plan: &Plan) -> Result<Vec<NodeId>, ExecError> {
    let topo = plan.topo_order().map_err(|e| ExecError::Plan(e.to_string()))?;
    let mut pending: BTreeMap<NodeId, usize> = topo.iter().map(|&id| (id, plan.node(id).inputs.len())).collect();
    let mut order = Vec::with_capacity(topo.len());
    while !pending.is_empty() {
        let ready: Vec<NodeId> = pending.iter().filter(|(_, &k)| k == 0).map(|(&id, _)| id).collect();
        let pick = ready
            .iter()
            .copied()
            .find(|&id| plan.node(id).op.is_relational())
            .or_else(|| ready.first().copied())
            .ok_or_else(|| ExecError::Plan("cycle".into()))?;
        pending.remove(&pick);
        for (c, _) in plan.consumers(pick) {
            if let Some(k) = pending.get_mut(&c) {
                *k -= 1;
            }
        }
        order.push(pick);
    }
    Ok(order)
}

/// Row count of the relation feeding the PREDICT boundary, for sizing
/// input-less operators such as constants.
fn plan_rows(plan: &Plan, done: &BTreeMap<NodeId, Output>) -> Option<usize> {
    let b = plan.boundary()?;
    match done.get(&plan.node(b).inputs[0].node)? {
        Output::Rel(t) => Some(t.rows),
        Output::Vec(_) => None,
    }
}

/// Runs one specialized plan per partition, each over the rows of its
/// partition, and concatenates the results in partition order. Every row
/// must fall into exactly one partition.
pub fn run_partitioned(plans: &[(PartitionSelector, Plan)], tables: &BTreeMap<String, Table>) -> Result<Table, ExecError> {
    let ranges: Vec<(&str, &str, f64, f64, &Plan)> = plans
        .iter()
        .filter_map(|(s, p)| match s {
            PartitionSelector::Range {
                table,
                column,
                min,
                max,
                ..
            } => Some((table.as_str(), column.as_str(), *min, *max, p)),
            PartitionSelector::All => None,
        })
        .collect();
    if ranges.is_empty() {
        let (_, p) = plans.first().ok_or_else(|| ExecError::Plan("no plans".into()))?;
        if plans.len() > 1 {
            return Err(ExecError::Plan("several plans without partition selectors".into()));
        }
        return execute_plan(p, tables);
    }
    if ranges.len() != plans.len() {
        return Err(ExecError::Plan("mixed partitioned and unpartitioned plans".into()));
    }
    let (table, column) = (ranges[0].0, ranges[0].1);
    if ranges.iter().any(|r| r.0 != table || r.1 != column) {
        return Err(ExecError::Plan("partitions must split one column".into()));
    }
    let data = tables
        .get(table)
        .ok_or_else(|| ExecError::Plan(format!("no data for table '{table}'")))?;
    let col = data
        .column(column)
        .ok_or_else(|| ExecError::Plan(format!("table '{table}' has no column '{column}'")))?;
    let mut buckets = vec![Vec::new(); ranges.len()];
    for r in 0..data.rows {
        let v = col
            .f64_at(r)
            .ok_or_else(|| ExecError::Coverage(format!("'{table}.{column}' is not numeric")))?;
        let hits: Vec<usize> = (0..ranges.len()).filter(|&i| ranges[i].2 <= v && v <= ranges[i].3).collect();
        match hits.as_slice() {
            [i] => buckets[*i].push(r),
            [] => return Err(ExecError::Coverage(format!("row {r} ({column} = {v}) is in no partition"))),
            _ => return Err(ExecError::Coverage(format!("row {r} ({column} = {v}) is in several partitions"))),
        }
    }
    let mut out: Option<Table> = None;
    for (i, rows) in buckets.iter().enumerate() {
        let mut part = tables.clone();
        part.insert(table.to_string(), data.take(rows));
        let t = execute_plan(ranges[i].4, &part)?;
        match &mut out {
            None => out = Some(t),
            Some(acc) => acc
                .append(&t)
                .map_err(|e| ExecError::Plan(format!("partition results differ in schema: {e}")))?,
        }
    }
    Ok(out.expect("at least one partition"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontend::{normalize_predict, parse_query};
    use crate::ir::build_ir;
    use crate::ml2sql::{compile_plan_to_sql, parse_expr, Ml2SqlConfig};

    #[test]
    fn expressions_follow_sql_rules() {
        let lookup = |c: &str| (c == "x").then_some(Value::Int(3));
        let e = parse_expr("CASE WHEN x > 2 AND x < 4 THEN (x - 1) * 0.5 ELSE 0 END").unwrap();
        assert_eq!(eval_expr(&e, &lookup).unwrap(), Value::Float(1.0));
        let g = parse_expr("GREATEST(ABS(-2), x, 1)").unwrap();
        assert_eq!(eval_expr(&g, &lookup).unwrap(), Value::Float(3.0));
        assert!(eval_expr(&parse_expr("y + 1").unwrap(), &lookup).is_err());
    }

    #[test]
    fn running_example_sql_matches_direct_execution() {
        let cat = fixtures::covid_catalog();
        let ast = normalize_predict(&parse_query(fixtures::COVID_QUERY, &cat).unwrap()).unwrap();
        let plan = build_ir(&ast, &fixtures::covid_pipeline(), &cat).unwrap();
        let tables = fixtures::covid_tables();
        let direct = execute_plan(&plan, &tables).unwrap();
        let sql = compile_plan_to_sql(&plan, &Ml2SqlConfig::default()).unwrap();
        assert_eq!(execute_plan(&sql, &tables).unwrap(), direct);
        assert!(direct.rows > 0);
    }
}
