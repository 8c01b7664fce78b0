//! Rendering relational plans as layered SELECT statements, and parsing
//! that SQL subset back into plans.

use std::collections::BTreeMap;

use super::compile::{Dialect, Ml2SqlError};
use super::expr::{expr, perr, render_alias, render_name, SqlExpr, SqlParseError};
use crate::executor::Field;
use crate::frontend::{Catalog, CmpOp};
use crate::ir::{Binding, NodeId, Plan, PlanNode, PlanOp, PlanPredicate, PortRef};
use crate::lexer::{tokenize, Cursor, Tok};
use crate::value::{format_number, DType, Value};

fn render_literal(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format_number(*f),
    }
}

fn render_predicate(p: &PlanPredicate) -> String {
    format!("{} {} {}", render_name(&p.column), p.op.symbol(), render_literal(&p.literal))
}

struct Renderer<'a> {
    plan: &'a Plan,
    dialect: Dialect,
    aliases: usize,
}

impl Renderer<'_> {
    /// A FROM item for a scan or a join tree of scans, if `id` is one.
    fn from_item(&self, id: NodeId) -> Option<String> {
        let n = self.plan.node(id);
        match &n.op {
            PlanOp::Scan { table, alias, .. } => Some(if table == alias {
                render_name(table)
            } else {
                format!("{} AS {}", render_name(table), render_name(alias))
            }),
            PlanOp::Join { left, right } => {
                let l = self.from_item(n.inputs[0].node)?;
                let r = self.plan.node(n.inputs[1].node);
                if !matches!(r.op, PlanOp::Scan { .. }) {
                    return None;
                }
                let r = self.from_item(n.inputs[1].node)?;
                Some(format!("{l} JOIN {r} ON {} = {}", render_name(left), render_name(right)))
            }
            _ => None,
        }
    }

    fn source(&mut self, id: NodeId) -> Result<String, Ml2SqlError> {
        if let Some(f) = self.from_item(id) {
            return Ok(f);
        }
        let inner = self.select(id)?;
        Ok(match self.dialect {
            Dialect::Neutral => format!("({inner})"),
            Dialect::Ansi => {
                self.aliases += 1;
                format!("({inner}) AS t{}", self.aliases)
            }
        })
    }

    fn select(&mut self, id: NodeId) -> Result<String, Ml2SqlError> {
        let n = self.plan.node(id);
        match &n.op {
            PlanOp::Scan { .. } | PlanOp::Join { .. } => {
                let from = self
                    .from_item(id)
                    .ok_or_else(|| Ml2SqlError::Unsupported("join with a non-table right side".into()))?;
                Ok(format!("SELECT * FROM {from}"))
            }
            PlanOp::Filter { predicates } => {
                let src = self.source(n.inputs[0].node)?;
                if predicates.is_empty() {
                    return Ok(format!("SELECT * FROM {src}"));
                }
                let w: Vec<String> = predicates.iter().map(render_predicate).collect();
                Ok(format!("SELECT * FROM {src} WHERE {}", w.join(" AND ")))
            }
            PlanOp::Compute { bindings } => {
                let src = self.source(n.inputs[0].node)?;
                let items: Vec<String> = bindings
                    .iter()
                    .map(|b| format!("{} AS {}", b.expr.render(), render_alias(&b.name)))
                    .collect();
                if items.is_empty() {
                    return Ok(format!("SELECT * FROM {src}"));
                }
                Ok(format!("SELECT *, {} FROM {src}", items.join(", ")))
            }
            PlanOp::Project { columns } => {
                let src = self.source(n.inputs[0].node)?;
                let cols: Vec<String> = columns.iter().map(|c| render_name(c)).collect();
                Ok(format!("SELECT {} FROM {src}", cols.join(", ")))
            }
            PlanOp::Empty { .. } => Err(Ml2SqlError::Unsupported("the plan is provably empty".into())),
            other => Err(Ml2SqlError::Unsupported(format!(
                "{} node {id} must be compiled first",
                other.name()
            ))),
        }
    }
}

/// Renders a plan with only relational nodes as one SQL statement.
pub fn render_sql(plan: &Plan, dialect: Dialect) -> Result<String, Ml2SqlError> {
    Renderer {
        plan,
        dialect,
        aliases: 0,
    }
    .select(plan.root)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Star,
    Expr { expr: SqlExpr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub table: String,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FromClause {
    Subquery(Box<Statement>),
    Tables {
        first: TableRef,
        /// (table, left column, right column)
        joins: Vec<(TableRef, String, String)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub items: Vec<SelectItem>,
    pub from: FromClause,
    pub filter: Option<SqlExpr>,
}

fn name(cur: &mut Cursor) -> Result<String, SqlParseError> {
    let t = cur.next();
    match t.tok {
        Tok::Ident(s) if !is_reserved(&s) => Ok(s),
        Tok::QuotedIdent(s) => Ok(s),
        other => Err(perr(format!("expected a name, found {other}"), t.pos)),
    }
}

fn is_reserved(s: &str) -> bool {
    ["select", "from", "where", "as", "join", "on", "and"]
        .iter()
        .any(|k| s.eq_ignore_ascii_case(k))
}

fn expect_keyword(cur: &mut Cursor, kw: &str) -> Result<(), SqlParseError> {
    if cur.eat_keyword(kw) {
        Ok(())
    } else {
        let t = cur.peek();
        Err(perr(format!("expected {}, found {}", kw.to_uppercase(), t.tok), t.pos))
    }
}

fn optional_alias(cur: &mut Cursor) -> Result<Option<String>, SqlParseError> {
    if cur.eat_keyword("as") {
        return name(cur).map(Some);
    }
    match &cur.peek().tok {
        Tok::Ident(s) if !is_reserved(s) => name(cur).map(Some),
        Tok::QuotedIdent(_) => name(cur).map(Some),
        _ => Ok(None),
    }
}

fn table_ref(cur: &mut Cursor) -> Result<TableRef, SqlParseError> {
    let table = name(cur)?;
    let alias = optional_alias(cur)?.unwrap_or_else(|| table.clone());
    Ok(TableRef { table, alias })
}

fn statement(cur: &mut Cursor) -> Result<Statement, SqlParseError> {
    expect_keyword(cur, "select")?;
    let mut items = Vec::new();
    loop {
        if cur.eat(&Tok::Star) {
            items.push(SelectItem::Star);
        } else {
            let e = expr(cur)?;
            let alias = optional_alias(cur)?;
            items.push(SelectItem::Expr { expr: e, alias });
        }
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    expect_keyword(cur, "from")?;
    let from = if cur.eat(&Tok::LParen) {
        let inner = statement(cur)?;
        if !cur.eat(&Tok::RParen) {
            let t = cur.peek();
            return Err(perr(format!("expected ')', found {}", t.tok), t.pos));
        }
        optional_alias(cur)?;
        FromClause::Subquery(Box::new(inner))
    } else {
        let first = table_ref(cur)?;
        let mut joins = Vec::new();
        while cur.eat_keyword("join") {
            let t = table_ref(cur)?;
            expect_keyword(cur, "on")?;
            let pos = cur.peek().pos;
            match expr(cur)? {
                SqlExpr::Cmp {
                    op: CmpOp::Eq,
                    lhs,
                    rhs,
                } => match (*lhs, *rhs) {
                    (SqlExpr::Column(l), SqlExpr::Column(r)) => joins.push((t, l, r)),
                    _ => return Err(perr("join condition must compare two columns", pos)),
                },
                _ => return Err(perr("join condition must be an equality", pos)),
            }
        }
        FromClause::Tables { first, joins }
    };
    let filter = if cur.eat_keyword("where") { Some(expr(cur)?) } else { None };
    Ok(Statement { items, from, filter })
}

/// Parses one statement of the generated-SQL subset.
pub fn parse_statement(text: &str) -> Result<Statement, SqlParseError> {
    let toks = tokenize(text).map_err(|e| perr(e.message, e.pos))?;
    let mut cur = Cursor::new(toks);
    let s = statement(&mut cur)?;
    cur.eat(&Tok::Semicolon);
    let t = cur.peek();
    if t.tok != Tok::Eof {
        return Err(perr(format!("unexpected {}", t.tok), t.pos));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LowerError {
    #[error(transparent)]
    Parse(#[from] SqlParseError),
    #[error("{0}")]
    Semantic(String),
}

struct Lowering<'a> {
    catalog: &'a Catalog,
    nodes: BTreeMap<NodeId, PlanNode>,
}

impl Lowering<'_> {
    fn add(&mut self, op: PlanOp, inputs: Vec<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.insert(
            id,
            PlanNode {
                op,
                inputs: inputs.into_iter().map(PortRef::out).collect(),
                label: None,
            },
        );
        id
    }

    fn scan(&mut self, t: &TableRef) -> Result<(NodeId, Vec<Field>), LowerError> {
        let schema = self
            .catalog
            .table(&t.table)
            .ok_or_else(|| LowerError::Semantic(format!("unknown table '{}'", t.table)))?;
        let columns: Vec<Field> = schema.columns.iter().map(|c| Field::new(c.name.clone(), c.dtype)).collect();
        let fields = columns
            .iter()
            .map(|c| Field::new(format!("{}.{}", t.alias, c.name), c.dtype))
            .collect();
        let id = self.add(
            PlanOp::Scan {
                table: t.table.clone(),
                alias: t.alias.clone(),
                columns,
            },
            vec![],
        );
        Ok((id, fields))
    }

    fn statement(&mut self, s: &Statement) -> Result<(NodeId, Vec<Field>), LowerError> {
        let (mut id, mut fields) = match &s.from {
            FromClause::Subquery(inner) => self.statement(inner)?,
            FromClause::Tables { first, joins } => {
                let (mut id, mut fields) = self.scan(first)?;
                for (t, a, b) in joins {
                    let (rid, rfields) = self.scan(t)?;
                    let on_left = |c: &str| fields.iter().any(|f| f.name == c);
                    let (left, right) = if on_left(a) { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
                    if !on_left(&left) || !rfields.iter().any(|f| f.name == right) {
                        return Err(LowerError::Semantic(format!("cannot resolve join {a} = {b}")));
                    }
                    id = self.add(PlanOp::Join { left, right }, vec![id, rid]);
                    fields.extend(rfields);
                }
                (id, fields)
            }
        };
        if let Some(w) = &s.filter {
            let preds = predicates(w, &fields)?;
            id = self.add(PlanOp::Filter { predicates: preds }, vec![id]);
        }
        let star = s.items.iter().any(|i| matches!(i, SelectItem::Star));
        let mut bindings = Vec::new();
        let mut projected = Vec::new();
        for item in &s.items {
            let SelectItem::Expr { expr, alias } = item else { continue };
            match (expr, alias) {
                (SqlExpr::Column(c), None) if !star => projected.push(c.clone()),
                _ => {
                    let name = alias.clone().unwrap_or_else(|| expr.render());
                    let dtype = infer_dtype(expr, &fields);
                    bindings.push(Binding {
                        name: name.clone(),
                        expr: expr.clone(),
                        dtype,
                    });
                    projected.push(name);
                }
            }
        }
        if !bindings.is_empty() {
            for b in &bindings {
                let mut cols = Vec::new();
                b.expr.columns(&mut cols);
                if let Some(c) = cols.iter().find(|c| !fields.iter().any(|f| &f.name == *c)) {
                    // Later bindings may refer to earlier ones.
                    if !bindings.iter().any(|x| &x.name == c) {
                        return Err(LowerError::Semantic(format!("unknown column '{c}'")));
                    }
                }
            }
            fields.extend(bindings.iter().map(|b| Field::new(b.name.clone(), b.dtype)));
            id = self.add(PlanOp::Compute { bindings }, vec![id]);
        }
        if !star {
            let mut out = Vec::new();
            for c in &projected {
                let f = fields
                    .iter()
                    .find(|f| &f.name == c)
                    .ok_or_else(|| LowerError::Semantic(format!("unknown column '{c}'")))?;
                out.push(f.clone());
            }
            id = self.add(PlanOp::Project { columns: projected }, vec![id]);
            fields = out;
        }
        Ok((id, fields))
    }
}

fn infer_dtype(e: &SqlExpr, fields: &[Field]) -> DType {
    match e {
        SqlExpr::Str(_) => DType::String,
        SqlExpr::Column(c) => fields.iter().find(|f| &f.name == c).map_or(DType::Float64, |f| f.dtype),
        SqlExpr::Case { whens, otherwise } => match whens.first() {
            Some((_, v)) => infer_dtype(v, fields),
            None => infer_dtype(otherwise, fields),
        },
        _ => DType::Float64,
    }
}

fn literal(e: &SqlExpr) -> Option<Value> {
    match e {
        SqlExpr::Number(v) => Some(Value::Float(*v)),
        SqlExpr::Str(s) => Some(Value::Str(s.clone())),
        _ => None,
    }
}

fn predicates(w: &SqlExpr, fields: &[Field]) -> Result<Vec<PlanPredicate>, LowerError> {
    let parts = match w {
        SqlExpr::And(v) => v.clone(),
        other => vec![other.clone()],
    };
    let mut out = Vec::new();
    for p in parts {
        let SqlExpr::Cmp { op, lhs, rhs } = &p else {
            return Err(LowerError::Semantic(format!("unsupported predicate {}", p.render())));
        };
        let (column, op, lit) = match (&**lhs, &**rhs) {
            (SqlExpr::Column(c), r) if literal(r).is_some() => (c.clone(), *op, literal(r)),
            (l, SqlExpr::Column(c)) if literal(l).is_some() => (c.clone(), op.flip(), literal(l)),
            _ => return Err(LowerError::Semantic(format!("unsupported predicate {}", p.render()))),
        };
        let f = fields
            .iter()
            .find(|f| f.name == column)
            .ok_or_else(|| LowerError::Semantic(format!("unknown column '{column}'")))?;
        out.push(PlanPredicate {
            column,
            op,
            literal: lit.expect("checked").coerce_to(f.dtype),
        });
    }
    Ok(out)
}

/// Builds a relational plan for a parsed statement.
pub fn lower_statement(s: &Statement, catalog: &Catalog) -> Result<Plan, LowerError> {
    let mut l = Lowering {
        catalog,
        nodes: BTreeMap::new(),
    };
    let (root, _) = l.statement(s)?;
    let plan = Plan {
        nodes: l.nodes,
        root,
        column_map: vec![],
        notes: vec![],
    };
    plan.validate().map_err(|e| LowerError::Semantic(e.to_string()))?;
    Ok(plan)
}

/// Parses and lowers SQL text in one step.
pub fn sql_to_plan(text: &str, catalog: &Catalog) -> Result<Plan, LowerError> {
    lower_statement(&parse_statement(text)?, catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn join_filter_compute_round_trip() {
        let cat = fixtures::covid_catalog();
        let text = "SELECT pi.pid, s FROM (SELECT *, pi.age * 2 AS s FROM (SELECT * FROM patient_info AS pi JOIN pulmonary_test AS pt ON pi.pid = pt.pid WHERE pi.age > 30))";
        let plan = sql_to_plan(text, &cat).unwrap();
        assert_eq!(render_sql(&plan, Dialect::Neutral).unwrap(), text);
        let again = sql_to_plan(&render_sql(&plan, Dialect::Ansi).unwrap(), &cat).unwrap();
        assert_eq!(again, plan);
    }

    #[test]
    fn rejects_non_column_join() {
        let cat = fixtures::covid_catalog();
        let err = sql_to_plan("SELECT * FROM patient_info JOIN pulmonary_test ON 1 = 1", &cat).unwrap_err();
        assert!(err.to_string().contains("two columns"), "{err}");
    }

    #[test]
    fn dotted_output_names_are_quoted_whole() {
        let cat = fixtures::covid_catalog();
        let text = "SELECT pi.pid, p.score FROM (SELECT *, pi.age / 100 AS \"p.score\" FROM patient_info AS pi)";
        let plan = sql_to_plan(text, &cat).unwrap();
        assert_eq!(render_sql(&plan, Dialect::Neutral).unwrap(), text);
        let cols: Vec<String> = plan.output_fields().unwrap().into_iter().map(|f| f.name).collect();
        assert_eq!(cols, ["pi.pid", "p.score"]);
    }
}
