//! Recursive-descent parser for the prediction-query dialect. Parsing is done
//! in two steps: syntax into raw, unresolved pieces, then name resolution
//! against the catalog.

use super::{
    Catalog, ColumnRef, FrontendError, JoinSpec, OutputBinding, Predicate, PredicateTarget,
    PredictForm, PredictInputs, PredictSpec, Projection, QueryAst, TableSource,
};
use super::CmpOp;
use crate::lexer::{tokenize, Cursor, Pos, Tok, Token};
use crate::pipeline::OutPort;
use crate::value::{DType, Value};

const RESERVED: &[&str] = &[
    "select", "from", "where", "join", "inner", "left", "right", "full", "outer", "cross", "on",
    "and", "or", "not", "as", "with", "union", "group", "order", "having", "limit",
];

#[derive(Debug, Clone)]
struct RawCol {
    qualifier: Option<String>,
    name: String,
    pos: Pos,
}

#[derive(Debug)]
enum RawItem {
    Star,
    QualifiedStar(String, Pos),
    Column(RawCol),
    Predict {
        path: String,
        inputs: Option<Vec<RawCol>>,
        alias: String,
        pos: Pos,
    },
}

#[derive(Debug)]
struct RawPredicate {
    col: RawCol,
    op: CmpOp,
    literal: Value,
    pos: Pos,
}

#[derive(Debug)]
struct RawTvf {
    path: String,
    data: (String, Pos),
    with: Vec<(String, DType, Pos)>,
    alias: String,
    pos: Pos,
}

#[derive(Debug)]
struct RawQuery {
    items: Vec<RawItem>,
    tables: Vec<(String, Option<String>, Pos)>,
    joins: Vec<(RawCol, RawCol, Pos)>,
    tvf: Option<RawTvf>,
    predicates: Vec<RawPredicate>,
}

fn parse_err(message: impl Into<String>, pos: Pos) -> FrontendError {
    FrontendError::Parse {
        message: message.into(),
        pos,
    }
}

fn unsupported(message: impl Into<String>, pos: Pos) -> FrontendError {
    FrontendError::Unsupported {
        message: message.into(),
        pos,
    }
}

fn resolution(message: impl Into<String>, pos: Pos) -> FrontendError {
    FrontendError::Resolution {
        message: message.into(),
        pos,
    }
}

/// Parses and resolves a prediction query.
pub fn parse_query(text: &str, catalog: &Catalog) -> Result<QueryAst, FrontendError> {
    let toks = tokenize(text).map_err(|e| parse_err(e.message, e.pos))?;
    let mut p = Parser {
        cur: Cursor::new(toks),
    };
    let raw = p.query()?;
    resolve(raw, catalog)
}

struct Parser {
    cur: Cursor,
}

impl Parser {
    fn expect(&mut self, tok: Tok) -> Result<Token, FrontendError> {
        let t = self.cur.peek().clone();
        if t.tok == tok {
            Ok(self.cur.next())
        } else {
            Err(parse_err(format!("expected {tok}, found {}", t.tok), t.pos))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<Token, FrontendError> {
        let t = self.cur.peek().clone();
        if t.is_keyword(kw) {
            Ok(self.cur.next())
        } else {
            Err(parse_err(
                format!("expected {}, found {}", kw.to_ascii_uppercase(), t.tok),
                t.pos,
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), FrontendError> {
        let t = self.cur.peek().clone();
        match &t.tok {
            Tok::Ident(s) if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r)) => {
                self.cur.next();
                Ok((s.clone(), t.pos))
            }
            Tok::QuotedIdent(s) => {
                self.cur.next();
                Ok((s.clone(), t.pos))
            }
            other => Err(parse_err(format!("expected {what}, found {other}"), t.pos)),
        }
    }

    fn query(&mut self) -> Result<RawQuery, FrontendError> {
        self.expect_keyword("select")?;
        if self.cur.peek().is_keyword("distinct") {
            return Err(unsupported("SELECT DISTINCT", self.cur.peek().pos));
        }
        let mut items = vec![self.select_item()?];
        while self.cur.eat(&Tok::Comma) {
            items.push(self.select_item()?);
        }
        self.expect_keyword("from")?;
        let mut q = RawQuery {
            items,
            tables: vec![],
            joins: vec![],
            tvf: None,
            predicates: vec![],
        };
        if self.cur.peek().is_keyword("predict") {
            q.tvf = Some(self.tvf()?);
        } else {
            q.tables.push(self.table_ref()?);
        }
        loop {
            let t = self.cur.peek().clone();
            if t.is_keyword("join") || t.is_keyword("inner") {
                if q.tvf.is_some() {
                    return Err(unsupported("joins with a PREDICT table function", t.pos));
                }
                self.cur.eat_keyword("inner");
                self.expect_keyword("join")?;
                q.tables.push(self.table_ref()?);
                self.expect_keyword("on")?;
                let left = self.column()?;
                let op_tok = self.cur.next();
                if op_tok.tok != Tok::Eq {
                    return Err(unsupported("join conditions other than column = column", op_tok.pos));
                }
                let right = self.column()?;
                if self.cur.peek().is_keyword("and") {
                    return Err(unsupported("composite join conditions", self.cur.peek().pos));
                }
                q.joins.push((left, right, t.pos));
            } else if ["left", "right", "full", "outer", "cross"]
                .iter()
                .any(|k| t.is_keyword(k))
            {
                return Err(unsupported("only INNER joins are supported", t.pos));
            } else if t.tok == Tok::Comma {
                return Err(unsupported("comma joins; use JOIN ... ON", t.pos));
            } else {
                break;
            }
        }
        if self.cur.eat_keyword("where") {
            self.conjunction(&mut q.predicates)?;
        }
        let t = self.cur.peek().clone();
        for kw in ["group", "order", "having", "limit", "union"] {
            if t.is_keyword(kw) {
                return Err(unsupported(format!("{} clauses", kw.to_ascii_uppercase()), t.pos));
            }
        }
        if t.is_keyword("or") {
            return Err(unsupported("disjunctions (OR) in WHERE", t.pos));
        }
        self.cur.eat(&Tok::Semicolon);
        let t = self.cur.peek().clone();
        if t.tok != Tok::Eof {
            return Err(parse_err(format!("unexpected {} after query", t.tok), t.pos));
        }
        Ok(q)
    }

    fn select_item(&mut self) -> Result<RawItem, FrontendError> {
        let t = self.cur.peek().clone();
        if t.tok == Tok::Star {
            self.cur.next();
            return Ok(RawItem::Star);
        }
        if t.is_keyword("predict") && self.cur.peek_at(1).tok == Tok::LParen {
            self.cur.next();
            self.cur.next();
            let path = self.path()?;
            self.expect(Tok::Comma)?;
            let inputs = if self.cur.eat(&Tok::Star) {
                None
            } else {
                let mut cols = vec![self.column()?];
                while self.cur.eat(&Tok::Comma) {
                    cols.push(self.column()?);
                }
                Some(cols)
            };
            self.expect(Tok::RParen)?;
            if !self.cur.eat_keyword("as") {
                return Err(parse_err(
                    "PREDICT in the select list needs AS <name>",
                    self.cur.peek().pos,
                ));
            }
            let (alias, _) = self.ident("output name")?;
            return Ok(RawItem::Predict {
                path,
                inputs,
                alias,
                pos: t.pos,
            });
        }
        if let Tok::Ident(name) = &t.tok {
            if self.cur.peek_at(1).tok == Tok::LParen {
                return Err(unsupported(
                    format!("function or aggregate '{name}' in the select list"),
                    t.pos,
                ));
            }
            if self.cur.peek_at(1).tok == Tok::Dot && self.cur.peek_at(2).tok == Tok::Star {
                let (q, pos) = self.ident("table name")?;
                self.cur.next();
                self.cur.next();
                return Ok(RawItem::QualifiedStar(q, pos));
            }
        }
        let col = self.column()?;
        if self.cur.peek().is_keyword("as") {
            return Err(unsupported("column aliases", self.cur.peek().pos));
        }
        Ok(RawItem::Column(col))
    }

    /// Model path: a quoted string, or bare tokens such as `models/m.json`.
    fn path(&mut self) -> Result<String, FrontendError> {
        let t = self.cur.peek().clone();
        if let Tok::Str(s) = &t.tok {
            self.cur.next();
            return Ok(s.clone());
        }
        let mut out = String::new();
        loop {
            let t = self.cur.peek().clone();
            let piece = match &t.tok {
                Tok::Ident(s) => s.clone(),
                Tok::Number { text, .. } => text.clone(),
                Tok::Dot => ".".into(),
                Tok::Slash => "/".into(),
                Tok::Minus => "-".into(),
                _ => break,
            };
            out.push_str(&piece);
            self.cur.next();
        }
        if out.is_empty() {
            return Err(parse_err(
                format!("expected a model path, found {}", self.cur.peek().tok),
                t.pos,
            ));
        }
        Ok(out)
    }

    fn column(&mut self) -> Result<RawCol, FrontendError> {
        let (first, pos) = self.ident("column name")?;
        if self.cur.eat(&Tok::Dot) {
            let (name, _) = self.ident("column name")?;
            Ok(RawCol {
                qualifier: Some(first),
                name,
                pos,
            })
        } else {
            Ok(RawCol {
                qualifier: None,
                name: first,
                pos,
            })
        }
    }

    fn table_ref(&mut self) -> Result<(String, Option<String>, Pos), FrontendError> {
        let t = self.cur.peek().clone();
        if t.tok == Tok::LParen {
            return Err(unsupported("subqueries", t.pos));
        }
        if t.is_keyword("predict") {
            return Err(unsupported("PREDICT table function inside a join", t.pos));
        }
        let (name, pos) = self.ident("table name")?;
        let alias = if self.cur.eat_keyword("as") {
            Some(self.ident("alias")?.0)
        } else if matches!(&self.cur.peek().tok, Tok::Ident(s) if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r)))
        {
            Some(self.ident("alias")?.0)
        } else {
            None
        };
        Ok((name, alias, pos))
    }

    fn tvf(&mut self) -> Result<RawTvf, FrontendError> {
        let pos = self.cur.next().pos;
        self.expect(Tok::LParen)?;
        let mut path = None;
        let mut data = None;
        loop {
            let (key, kpos) = match &self.cur.peek().tok {
                Tok::Ident(s) => (s.to_ascii_lowercase(), self.cur.next().pos),
                other => {
                    return Err(parse_err(
                        format!("expected MODEL = or DATA =, found {other}"),
                        self.cur.peek().pos,
                    ))
                }
            };
            self.expect(Tok::Eq)?;
            match key.as_str() {
                "model" if path.is_none() => path = Some(self.path()?),
                "data" if data.is_none() => {
                    let t = self.cur.peek().clone();
                    if t.tok == Tok::LParen {
                        return Err(unsupported("subqueries", t.pos));
                    }
                    data = Some(self.ident("table name")?);
                }
                _ => return Err(parse_err(format!("unexpected PREDICT argument '{key}'"), kpos)),
            }
            if !self.cur.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        let path = path.ok_or_else(|| parse_err("PREDICT needs MODEL = <path>", pos))?;
        let data = data.ok_or_else(|| parse_err("PREDICT needs DATA = <table>", pos))?;
        let mut with = Vec::new();
        if self.cur.eat_keyword("with") {
            self.expect(Tok::LParen)?;
            loop {
                let (name, npos) = self.ident("output column name")?;
                let (ty, tpos) = match &self.cur.peek().tok {
                    Tok::Ident(s) => (s.clone(), self.cur.next().pos),
                    other => {
                        return Err(parse_err(
                            format!("expected a type name, found {other}"),
                            self.cur.peek().pos,
                        ))
                    }
                };
                let dtype =
                    DType::parse(&ty).ok_or_else(|| parse_err(format!("unknown type '{ty}'"), tpos))?;
                with.push((name, dtype, npos));
                if !self.cur.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::RParen)?;
        }
        self.cur.eat_keyword("as");
        let (alias, _) = self.ident("PREDICT alias")?;
        Ok(RawTvf {
            path,
            data,
            with,
            alias,
            pos,
        })
    }

    fn conjunction(&mut self, out: &mut Vec<RawPredicate>) -> Result<(), FrontendError> {
        self.predicate(out)?;
        loop {
            let t = self.cur.peek().clone();
            if t.is_keyword("and") {
                self.cur.next();
                self.predicate(out)?;
            } else if t.is_keyword("or") {
                return Err(unsupported("disjunctions (OR) in WHERE", t.pos));
            } else {
                return Ok(());
            }
        }
    }

    fn predicate(&mut self, out: &mut Vec<RawPredicate>) -> Result<(), FrontendError> {
        let t = self.cur.peek().clone();
        if t.is_keyword("not") {
            return Err(unsupported("NOT in WHERE", t.pos));
        }
        if t.tok == Tok::LParen {
            if self.cur.peek_at(1).is_keyword("select") {
                return Err(unsupported("subqueries", t.pos));
            }
            self.cur.next();
            self.conjunction(out)?;
            let close = self.cur.peek().clone();
            if close.is_keyword("or") {
                return Err(unsupported("disjunctions (OR) in WHERE", close.pos));
            }
            self.expect(Tok::RParen)?;
            return Ok(());
        }
        let lhs = self.operand()?;
        let op_tok = self.cur.next();
        let op = match &op_tok.tok {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            Tok::Ident(kw)
                if ["in", "between", "like", "is"]
                    .iter()
                    .any(|k| kw.eq_ignore_ascii_case(k)) =>
            {
                return Err(unsupported(
                    format!("{} predicates", kw.to_ascii_uppercase()),
                    op_tok.pos,
                ))
            }
            other => {
                return Err(parse_err(
                    format!("expected a comparison operator, found {other}"),
                    op_tok.pos,
                ))
            }
        };
        let rhs = self.operand()?;
        let (col, op, literal) = match (lhs, rhs) {
            (Operand::Col(c), Operand::Lit(v)) => (c, op, v),
            (Operand::Lit(v), Operand::Col(c)) => (c, op.flip(), v),
            (Operand::Col(_), Operand::Col(_)) => {
                return Err(unsupported("column-to-column comparisons in WHERE", t.pos))
            }
            (Operand::Lit(_), Operand::Lit(_)) => {
                return Err(unsupported("literal-only comparisons in WHERE", t.pos))
            }
        };
        out.push(RawPredicate {
            col,
            op,
            literal,
            pos: t.pos,
        });
        Ok(())
    }

    fn operand(&mut self) -> Result<Operand, FrontendError> {
        let t = self.cur.peek().clone();
        match &t.tok {
            Tok::Number { .. } => Ok(Operand::Lit(self.number(false)?)),
            Tok::Minus => {
                self.cur.next();
                match self.cur.peek().tok {
                    Tok::Number { .. } => Ok(Operand::Lit(self.number(true)?)),
                    ref other => Err(parse_err(
                        format!("expected a number after '-', found {other}"),
                        self.cur.peek().pos,
                    )),
                }
            }
            Tok::Str(s) => {
                self.cur.next();
                Ok(Operand::Lit(Value::Str(s.clone())))
            }
            Tok::LParen if self.cur.peek_at(1).is_keyword("select") => {
                Err(unsupported("subqueries", t.pos))
            }
            Tok::Ident(_) => {
                if self.cur.peek_at(1).tok == Tok::LParen {
                    return Err(unsupported("function calls in WHERE", t.pos));
                }
                Ok(Operand::Col(self.column()?))
            }
            other => Err(parse_err(format!("expected a column or literal, found {other}"), t.pos)),
        }
    }

    fn number(&mut self, negate: bool) -> Result<Value, FrontendError> {
        let t = self.cur.next();
        let Tok::Number { text, is_float } = &t.tok else {
            return Err(parse_err("expected a number", t.pos));
        };
        literal_number(text, *is_float, negate).ok_or_else(|| parse_err(format!("bad number '{text}'"), t.pos))
    }
}

/// Parses numeric literal text; integers that overflow become floats.
pub(crate) fn literal_number(text: &str, is_float: bool, negate: bool) -> Option<Value> {
    if !is_float {
        let signed = if negate { format!("-{text}") } else { text.to_string() };
        if let Ok(v) = signed.parse::<i64>() {
            return Some(Value::Int(v));
        }
    }
    let v: f64 = text.parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    Some(Value::Float(if negate { -v } else { v }))
}

enum Operand {
    Col(RawCol),
    Lit(Value),
}

/// What an unresolved name can refer to.
enum Resolved {
    Column(ColumnRef),
    Output(String),
}

struct Scope<'a> {
    sources: Vec<(TableSource, &'a super::TableSchema)>,
    /// PREDICT outputs visible by name: (qualifier, name, binding).
    outputs: Vec<(Option<String>, String, OutputBinding)>,
}

impl Scope<'_> {
    fn resolve(&self, c: &RawCol) -> Result<Resolved, FrontendError> {
        match &c.qualifier {
            Some(q) => {
                if let Some((src, schema)) = self.sources.iter().find(|(s, _)| &s.alias == q) {
                    let def = schema.column(&c.name).ok_or_else(|| {
                        resolution(format!("table '{}' has no column '{}'", src.table, c.name), c.pos)
                    })?;
                    return Ok(Resolved::Column(ColumnRef {
                        relation: src.alias.clone(),
                        column: def.name.clone(),
                        dtype: def.dtype,
                        pos: c.pos,
                    }));
                }
                if let Some((_, _, b)) = self
                    .outputs
                    .iter()
                    .find(|(oq, n, _)| oq.as_deref() == Some(q.as_str()) && *n == c.name)
                {
                    return Ok(Resolved::Output(b.name.clone()));
                }
                if self.outputs.iter().any(|(oq, _, _)| oq.as_deref() == Some(q.as_str())) {
                    return Err(resolution(format!("PREDICT '{q}' has no output '{}'", c.name), c.pos));
                }
                Err(resolution(format!("unknown table or alias '{q}'"), c.pos))
            }
            None => {
                let mut hits: Vec<Resolved> = self
                    .sources
                    .iter()
                    .filter_map(|(src, schema)| {
                        schema.column(&c.name).map(|def| {
                            Resolved::Column(ColumnRef {
                                relation: src.alias.clone(),
                                column: def.name.clone(),
                                dtype: def.dtype,
                                pos: c.pos,
                            })
                        })
                    })
                    .collect();
                hits.extend(
                    self.outputs
                        .iter()
                        .filter(|(q, n, _)| q.is_none() && *n == c.name)
                        .map(|(_, _, b)| Resolved::Output(b.name.clone())),
                );
                match hits.len() {
                    0 => Err(resolution(format!("unknown column '{}'", c.name), c.pos)),
                    1 => Ok(hits.pop().expect("one hit")),
                    _ => Err(resolution(format!("column '{}' is ambiguous", c.name), c.pos)),
                }
            }
        }
    }

    fn column(&self, c: &RawCol) -> Result<ColumnRef, FrontendError> {
        match self.resolve(c)? {
            Resolved::Column(r) => Ok(r),
            Resolved::Output(_) => Err(resolution(
                format!("'{}' is a PREDICT output, expected a table column", c.name),
                c.pos,
            )),
        }
    }
}

fn resolve(raw: RawQuery, catalog: &Catalog) -> Result<QueryAst, FrontendError> {
    let mut scope = Scope {
        sources: vec![],
        outputs: vec![],
    };
    let mut table_list = raw.tables;
    if let Some(tvf) = &raw.tvf {
        table_list.push((tvf.data.0.clone(), None, tvf.data.1));
    }
    for (table, alias, pos) in table_list {
        let schema = catalog
            .table(&table)
            .ok_or_else(|| resolution(format!("unknown table '{table}'"), pos))?;
        let alias = alias.unwrap_or_else(|| table.clone());
        if scope.sources.iter().any(|(s, _)| s.alias == alias) {
            return Err(resolution(format!("duplicate table alias '{alias}'"), pos));
        }
        scope.sources.push((TableSource { table, alias, pos }, schema));
    }

    // Locate the single PREDICT call.
    let udf: Vec<&RawItem> = raw
        .items
        .iter()
        .filter(|i| matches!(i, RawItem::Predict { .. }))
        .collect();
    let predict_count = udf.len() + usize::from(raw.tvf.is_some());
    if predict_count != 1 {
        let pos = match (udf.get(1).or(udf.first()), &raw.tvf) {
            (Some(RawItem::Predict { pos, .. }), _) => *pos,
            (_, Some(t)) => t.pos,
            _ => Pos { line: 1, col: 1 },
        };
        return Err(if predict_count == 0 {
            parse_err("query must contain a PREDICT call", Pos { line: 1, col: 1 })
        } else {
            unsupported("more than one PREDICT call per query", pos)
        });
    }
    let (model_path, form, raw_inputs, pos) = match (udf.first(), &raw.tvf) {
        (
            Some(RawItem::Predict {
                path,
                inputs,
                alias,
                pos,
            }),
            _,
        ) => {
            let binding = OutputBinding {
                name: alias.clone(),
                port: OutPort::Label,
                dtype: None,
            };
            scope.outputs.push((None, alias.clone(), binding));
            (path.clone(), PredictForm::Udf, inputs.clone(), *pos)
        }
        (_, Some(tvf)) => {
            for (name, dtype, npos) in &tvf.with {
                let port = if name.eq_ignore_ascii_case("score") {
                    OutPort::Score
                } else {
                    OutPort::Label
                };
                if scope
                    .outputs
                    .iter()
                    .any(|(_, n, b)| n == name || b.port == port)
                {
                    return Err(resolution(
                        format!("PREDICT output '{name}' duplicates another {port} output"),
                        *npos,
                    ));
                }
                let binding = OutputBinding {
                    name: format!("{}.{}", tvf.alias, name),
                    port,
                    dtype: Some(*dtype),
                };
                if !dtype.is_numeric() {
                    return Err(resolution(
                        format!("PREDICT output '{name}' must be numeric, not {dtype}"),
                        *npos,
                    ));
                }
                scope
                    .outputs
                    .push((Some(tvf.alias.clone()), name.clone(), binding));
            }
            if scope.sources.iter().any(|(s, _)| s.alias == tvf.alias) {
                return Err(resolution(
                    format!("PREDICT alias '{}' clashes with a table name", tvf.alias),
                    tvf.pos,
                ));
            }
            (
                tvf.path.clone(),
                PredictForm::Tvf {
                    alias: tvf.alias.clone(),
                },
                None,
                tvf.pos,
            )
        }
        _ => unreachable!("exactly one PREDICT"),
    };
    let inputs = match raw_inputs {
        None => PredictInputs::Star,
        Some(cols) => PredictInputs::Columns(
            cols.iter()
                .map(|c| scope.column(c))
                .collect::<Result<_, _>>()?,
        ),
    };

    // Joins: each ON relates the newly joined source to an earlier one.
    let mut joins = Vec::new();
    for (i, (a, b, pos)) in raw.joins.iter().enumerate() {
        let new_alias = &scope.sources[i + 1].0.alias;
        let (a, b) = (scope.column(a)?, scope.column(b)?);
        let earlier = |c: &ColumnRef| scope.sources[..=i].iter().any(|(s, _)| s.alias == c.relation);
        let (left, right) = if &b.relation == new_alias && earlier(&a) {
            (a, b)
        } else if &a.relation == new_alias && earlier(&b) {
            (b, a)
        } else {
            return Err(resolution(
                format!("join condition must relate '{new_alias}' to an earlier table"),
                *pos,
            ));
        };
        if left.dtype.is_numeric() != right.dtype.is_numeric() {
            return Err(resolution(
                format!(
                    "cannot join {} ({}) with {} ({})",
                    left.qualified(),
                    left.dtype,
                    right.qualified(),
                    right.dtype
                ),
                *pos,
            ));
        }
        joins.push(JoinSpec { left, right });
    }

    let mut projections = Vec::new();
    for item in &raw.items {
        match item {
            RawItem::Star => {
                for (src, schema) in &scope.sources {
                    for def in &schema.columns {
                        projections.push(Projection::Column(ColumnRef {
                            relation: src.alias.clone(),
                            column: def.name.clone(),
                            dtype: def.dtype,
                            pos: src.pos,
                        }));
                    }
                }
                if matches!(form, PredictForm::Tvf { .. }) {
                    for (_, _, b) in &scope.outputs {
                        projections.push(Projection::Output(b.name.clone()));
                    }
                }
            }
            RawItem::QualifiedStar(q, qpos) => {
                if let Some((src, schema)) = scope.sources.iter().find(|(s, _)| &s.alias == q) {
                    for def in &schema.columns {
                        projections.push(Projection::Column(ColumnRef {
                            relation: src.alias.clone(),
                            column: def.name.clone(),
                            dtype: def.dtype,
                            pos: *qpos,
                        }));
                    }
                } else if matches!(&form, PredictForm::Tvf { alias } if alias == q) {
                    for (_, _, b) in &scope.outputs {
                        projections.push(Projection::Output(b.name.clone()));
                    }
                } else {
                    return Err(resolution(format!("unknown table or alias '{q}'"), *qpos));
                }
            }
            RawItem::Column(c) => projections.push(match scope.resolve(c)? {
                Resolved::Column(r) => Projection::Column(r),
                Resolved::Output(n) => Projection::Output(n),
            }),
            RawItem::Predict { alias, .. } => projections.push(Projection::Output(alias.clone())),
        }
    }

    let mut predicates = Vec::new();
    for p in &raw.predicates {
        let target = match scope.resolve(&p.col)? {
            Resolved::Column(c) => {
                if !p.literal.compatible_with(c.dtype) {
                    return Err(resolution(
                        format!(
                            "literal {} does not match column {} of type {}",
                            p.literal,
                            c.qualified(),
                            c.dtype
                        ),
                        p.pos,
                    ));
                }
                PredicateTarget::Column(c)
            }
            Resolved::Output(name) => {
                let dtype = scope
                    .outputs
                    .iter()
                    .find(|(_, _, b)| b.name == name)
                    .and_then(|(_, _, b)| b.dtype);
                if let Some(d) = dtype {
                    if !p.literal.compatible_with(d) {
                        return Err(resolution(
                            format!("literal {} does not match output {name} of type {d}", p.literal),
                            p.pos,
                        ));
                    }
                }
                PredicateTarget::Output(name)
            }
        };
        predicates.push(Predicate {
            target,
            op: p.op,
            literal: p.literal.clone(),
            pos: p.pos,
        });
    }

    Ok(QueryAst {
        projections,
        sources: scope.sources.into_iter().map(|(s, _)| s).collect(),
        joins,
        predicates,
        predict: PredictSpec {
            model_path,
            form,
            inputs,
            outputs: scope.outputs.into_iter().map(|(_, _, b)| b).collect(),
            pos,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontend::{extract_predicates, normalize_predict, ColumnDef, TableSchema};

    fn one_table() -> Catalog {
        let mut c = Catalog::default();
        c.tables.insert(
            "data".into(),
            TableSchema {
                columns: vec![
                    ColumnDef {
                        name: "a".into(),
                        dtype: DType::Int64,
                    },
                    ColumnDef {
                        name: "b".into(),
                        dtype: DType::Float64,
                    },
                ],
                partition_column: None,
            },
        );
        c
    }

    #[test]
    fn udf_form_over_one_table() {
        let ast = parse_query("SELECT PREDICT(model.onnx, *) AS predict FROM data", &one_table()).unwrap();
        assert_eq!(ast.predict.form, PredictForm::Udf);
        assert_eq!(ast.predict.model_path, "model.onnx");
        assert_eq!(ast.predict.inputs, PredictInputs::Star);
        assert!(ast.predicates.is_empty());
        assert_eq!(ast.projections, vec![Projection::Output("predict".into())]);
    }

    #[test]
    fn running_example_query() {
        let ast = parse_query(fixtures::COVID_QUERY, &fixtures::covid_catalog()).unwrap();
        assert_eq!(ast.sources.len(), 3);
        assert_eq!(ast.joins.len(), 2);
        let (inputs, outputs) = extract_predicates(&ast);
        assert_eq!(inputs.len(), 1);
        assert_eq!(outputs.len(), 1);
        assert_eq!(inputs[0].to_string(), "pi.asthma = 1");
        assert_eq!(outputs[0].target, PredicateTarget::Output("risk_of_covid".into()));
    }

    #[test]
    fn or_is_unsupported() {
        let e = parse_query("SELECT PREDICT(m, *) AS p FROM data WHERE a = 1 OR b = 2", &one_table())
            .unwrap_err();
        assert!(matches!(e, FrontendError::Unsupported { .. }), "{e}");
        assert_eq!(e.pos(), Pos { line: 1, col: 49 });
    }

    #[test]
    fn outer_joins_and_subqueries_are_unsupported() {
        let c = fixtures::covid_catalog();
        for q in [
            "SELECT PREDICT(m, *) AS p FROM patient_info LEFT JOIN blood_test ON patient_info.pid = blood_test.pid",
            "SELECT PREDICT(m, *) AS p FROM (SELECT * FROM patient_info) AS x",
            "SELECT PREDICT(m, *) AS p FROM patient_info WHERE pid = (SELECT 1)",
        ] {
            assert!(matches!(parse_query(q, &c), Err(FrontendError::Unsupported { .. })), "{q}");
        }
    }

    #[test]
    fn resolution_errors() {
        let c = one_table();
        assert!(matches!(
            parse_query("SELECT PREDICT(m, *) AS p FROM nope", &c),
            Err(FrontendError::Resolution { .. })
        ));
        assert!(matches!(
            parse_query("SELECT zz, PREDICT(m, *) AS p FROM data", &c),
            Err(FrontendError::Resolution { .. })
        ));
        assert!(matches!(
            parse_query("SELECT PREDICT(m, *) AS p FROM data WHERE a = 'x'", &c),
            Err(FrontendError::Resolution { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let e = parse_query("SELECT PREDICT(m, *) AS p\nFROM data WHERE a =", &one_table()).unwrap_err();
        assert!(matches!(e, FrontendError::Parse { .. }));
        assert_eq!(e.pos().line, 2);
    }

    #[test]
    fn tvf_normalizes_to_udf() {
        let ast = parse_query(
            "SELECT data.*, p.score FROM PREDICT(MODEL = m.json, DATA = data) WITH (score float) AS p",
            &one_table(),
        )
        .unwrap();
        assert!(matches!(ast.predict.form, PredictForm::Tvf { .. }));
        let n = normalize_predict(&ast).unwrap();
        assert_eq!(n.predict.form, PredictForm::Udf);
        assert_eq!(n.predict.outputs[0].name, "p.score");
        assert_eq!(n.predict.outputs[0].port, OutPort::Score);
        assert_eq!(normalize_predict(&n).unwrap(), n);
        assert_eq!(n.projections.last(), Some(&Projection::Output("p.score".into())));
    }

    #[test]
    fn tvf_without_with_fails_at_normalize() {
        let ast = parse_query(
            "SELECT data.* FROM PREDICT(MODEL = m.json, DATA = data) AS p",
            &one_table(),
        )
        .unwrap();
        assert!(matches!(normalize_predict(&ast), Err(FrontendError::Parse { .. })));
    }

    #[test]
    fn literal_first_predicates_flip() {
        let ast = parse_query("SELECT PREDICT(m, *) AS p FROM data WHERE 30 > b AND a = 1", &one_table())
            .unwrap();
        let (inputs, _) = extract_predicates(&ast);
        assert_eq!(inputs[0].to_string(), "data.b < 30");
        assert_eq!(inputs[1].to_string(), "data.a = 1");
    }
}
