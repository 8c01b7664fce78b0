//! Dialect-neutral SQL expressions: AST, rendering and parsing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::frontend::CmpOp;
use crate::lexer::{Cursor, Pos, Tok};
use crate::value::format_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => PREC_ADD,
            BinOp::Mul | BinOp::Div => PREC_MUL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Func {
    Exp,
    Abs,
    Sqrt,
    Greatest,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "EXP",
            Func::Abs => "ABS",
            Func::Sqrt => "SQRT",
            Func::Greatest => "GREATEST",
        }
    }

    fn parse(name: &str) -> Option<Func> {
        [Func::Exp, Func::Abs, Func::Sqrt, Func::Greatest]
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SqlExpr {
    /// A relational column or an earlier named binding.
    Column(String),
    /// Abstract feature reference such as `F[0]`.
    Indexed { name: String, index: usize },
    Number(f64),
    Str(String),
    Binary {
        op: BinOp,
        lhs: Box<SqlExpr>,
        rhs: Box<SqlExpr>,
    },
    Neg(Box<SqlExpr>),
    Cmp {
        op: CmpOp,
        lhs: Box<SqlExpr>,
        rhs: Box<SqlExpr>,
    },
    And(Vec<SqlExpr>),
    Case {
        whens: Vec<(SqlExpr, SqlExpr)>,
        otherwise: Box<SqlExpr>,
    },
    Func { func: Func, args: Vec<SqlExpr> },
}

const PREC_AND: u8 = 2;
const PREC_CMP: u8 = 3;
const PREC_ADD: u8 = 4;
const PREC_MUL: u8 = 5;
const PREC_NEG: u8 = 6;
const PREC_ATOM: u8 = 7;

impl SqlExpr {
    pub fn col(name: impl Into<String>) -> SqlExpr {
        SqlExpr::Column(name.into())
    }

    pub fn num(v: f64) -> SqlExpr {
        SqlExpr::Number(v)
    }

    pub fn bin(op: BinOp, lhs: SqlExpr, rhs: SqlExpr) -> SqlExpr {
        SqlExpr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn cmp(op: CmpOp, lhs: SqlExpr, rhs: SqlExpr) -> SqlExpr {
        SqlExpr::Cmp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Negation; literals fold so that rendering and re-parsing agree.
    pub fn neg(e: SqlExpr) -> SqlExpr {
        match e {
            SqlExpr::Number(v) => SqlExpr::Number(-v),
            other => SqlExpr::Neg(Box::new(other)),
        }
    }

    /// `CASE WHEN cond THEN a ELSE b END`.
    pub fn if_else(cond: SqlExpr, a: SqlExpr, b: SqlExpr) -> SqlExpr {
        SqlExpr::Case {
            whens: vec![(cond, a)],
            otherwise: Box::new(b),
        }
    }

    pub fn func(func: Func, args: Vec<SqlExpr>) -> SqlExpr {
        SqlExpr::Func { func, args }
    }

    /// True for expressions that are cheap to repeat: names and literals.
    pub fn is_trivial(&self) -> bool {
        matches!(
            self,
            SqlExpr::Column(_) | SqlExpr::Indexed { .. } | SqlExpr::Number(_) | SqlExpr::Str(_)
        )
    }

    fn prec(&self) -> u8 {
        match self {
            SqlExpr::Binary { op, .. } => op.prec(),
            SqlExpr::Neg(_) => PREC_NEG,
            SqlExpr::Cmp { .. } => PREC_CMP,
            SqlExpr::And(v) if v.len() > 1 => PREC_AND,
            SqlExpr::Number(v) if *v < 0.0 || (v.to_bits() >> 63) == 1 => PREC_NEG,
            _ => PREC_ATOM,
        }
    }

    /// Nesting depth of CASE expressions (0 when there is none).
    pub fn case_depth(&self) -> usize {
        let mut deepest = 0;
        self.visit_children(&mut |c| deepest = deepest.max(c.case_depth()));
        match self {
            SqlExpr::Case { .. } => deepest + 1,
            _ => deepest,
        }
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        let mut n = 1;
        self.visit_children(&mut |c| n += c.size());
        n
    }

    pub fn visit_children(&self, f: &mut impl FnMut(&SqlExpr)) {
        match self {
            SqlExpr::Binary { lhs, rhs, .. } | SqlExpr::Cmp { lhs, rhs, .. } => {
                f(lhs);
                f(rhs);
            }
            SqlExpr::Neg(e) => f(e),
            SqlExpr::And(v) => v.iter().for_each(f),
            SqlExpr::Func { args, .. } => args.iter().for_each(f),
            SqlExpr::Case { whens, otherwise } => {
                for (c, v) in whens {
                    f(c);
                    f(v);
                }
                f(otherwise);
            }
            SqlExpr::Column(_) | SqlExpr::Indexed { .. } | SqlExpr::Number(_) | SqlExpr::Str(_) => {}
        }
    }

    /// Column names referenced anywhere in the expression.
    pub fn columns(&self, out: &mut Vec<String>) {
        if let SqlExpr::Column(c) = self {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        self.visit_children(&mut |c| c.columns(out));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.write(&mut s);
        s
    }

    fn write_operand(&self, out: &mut String, parens: bool) {
        if parens || matches!(self, SqlExpr::Case { .. }) {
            out.push('(');
            self.write(out);
            out.push(')');
        } else {
            self.write(out);
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            SqlExpr::Column(name) => out.push_str(&render_name(name)),
            SqlExpr::Indexed { name, index } => {
                out.push_str(&render_name(name));
                out.push_str(&format!("[{index}]"));
            }
            SqlExpr::Number(v) => out.push_str(&format_number(*v)),
            SqlExpr::Str(s) => {
                out.push('\'');
                out.push_str(&s.replace('\'', "''"));
                out.push('\'');
            }
            SqlExpr::Binary { op, lhs, rhs } => {
                let p = op.prec();
                lhs.write_operand(out, lhs.prec() < p);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                rhs.write_operand(out, rhs.prec() <= p);
            }
            SqlExpr::Neg(e) => {
                out.push('-');
                e.write_operand(out, e.prec() < PREC_ATOM);
            }
            SqlExpr::Cmp { op, lhs, rhs } => {
                lhs.write_operand(out, lhs.prec() <= PREC_CMP);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                rhs.write_operand(out, rhs.prec() <= PREC_CMP);
            }
            SqlExpr::And(parts) => {
                if parts.is_empty() {
                    out.push_str("1 = 1");
                }
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" AND ");
                    }
                    p.write_operand(out, p.prec() <= PREC_AND);
                }
            }
            SqlExpr::Case { whens, otherwise } => {
                out.push_str("CASE");
                for (c, v) in whens {
                    out.push_str(" WHEN ");
                    c.write(out);
                    out.push_str(" THEN ");
                    v.write_operand(out, false);
                }
                out.push_str(" ELSE ");
                otherwise.write_operand(out, false);
                out.push_str(" END");
            }
            SqlExpr::Func { func, args } => {
                out.push_str(func.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    a.write(out);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for SqlExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn plain_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_keyword(s)
}

fn is_keyword(s: &str) -> bool {
    [
        "select", "from", "where", "as", "and", "or", "not", "case", "when", "then", "else", "end",
        "join", "on", "inner",
    ]
    .iter()
    .any(|k| s.eq_ignore_ascii_case(k))
}

/// Renders a possibly qualified name, quoting parts that are not plain identifiers.
pub fn render_name(name: &str) -> String {
    name.split('.')
        .map(|part| {
            if plain_ident(part) {
                part.to_string()
            } else {
                format!("\"{}\"", part.replace('"', "\"\""))
            }
        })
        .collect::<Vec<_>>()
        .join(".")
}

/// Renders an output column name as one identifier; dotted names are quoted whole.
pub fn render_alias(name: &str) -> String {
    if plain_ident(name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("SQL parse error at {pos}: {message}")]
pub struct SqlParseError {
    pub message: String,
    pub pos: Pos,
}

pub(crate) fn perr(message: impl Into<String>, pos: Pos) -> SqlParseError {
    SqlParseError {
        message: message.into(),
        pos,
    }
}

/// Parses one expression covering the whole of `text`.
pub fn parse_expr(text: &str) -> Result<SqlExpr, SqlParseError> {
    let toks = crate::lexer::tokenize(text).map_err(|e| perr(e.message, e.pos))?;
    let mut cur = Cursor::new(toks);
    let e = expr(&mut cur)?;
    let t = cur.peek();
    if t.tok != Tok::Eof {
        return Err(perr(format!("unexpected {}", t.tok), t.pos));
    }
    Ok(e)
}

/// Full expression including AND chains.
pub(crate) fn expr(cur: &mut Cursor) -> Result<SqlExpr, SqlParseError> {
    let first = comparison(cur)?;
    if !cur.peek().is_keyword("and") {
        return Ok(first);
    }
    let mut parts = vec![first];
    while cur.eat_keyword("and") {
        parts.push(comparison(cur)?);
    }
    Ok(SqlExpr::And(parts))
}

fn comparison(cur: &mut Cursor) -> Result<SqlExpr, SqlParseError> {
    let lhs = additive(cur)?;
    let op = match cur.peek().tok {
        Tok::Eq => CmpOp::Eq,
        Tok::Ne => CmpOp::Ne,
        Tok::Lt => CmpOp::Lt,
        Tok::Le => CmpOp::Le,
        Tok::Gt => CmpOp::Gt,
        Tok::Ge => CmpOp::Ge,
        _ => return Ok(lhs),
    };
    cur.next();
    let rhs = additive(cur)?;
    Ok(SqlExpr::cmp(op, lhs, rhs))
}

fn additive(cur: &mut Cursor) -> Result<SqlExpr, SqlParseError> {
    let mut lhs = multiplicative(cur)?;
    loop {
        let op = match cur.peek().tok {
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            _ => return Ok(lhs),
        };
        cur.next();
        let rhs = multiplicative(cur)?;
        lhs = SqlExpr::bin(op, lhs, rhs);
    }
}

fn multiplicative(cur: &mut Cursor) -> Result<SqlExpr, SqlParseError> {
    let mut lhs = unary(cur)?;
    loop {
        let op = match cur.peek().tok {
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            _ => return Ok(lhs),
        };
        cur.next();
        let rhs = unary(cur)?;
        lhs = SqlExpr::bin(op, lhs, rhs);
    }
}

fn unary(cur: &mut Cursor) -> Result<SqlExpr, SqlParseError> {
    if cur.eat(&Tok::Minus) {
        if let Tok::Number { text, .. } = &cur.peek().tok {
            let v = number(text, cur.peek().pos)?;
            cur.next();
            return Ok(SqlExpr::Number(-v));
        }
        return Ok(SqlExpr::Neg(Box::new(unary(cur)?)));
    }
    primary(cur)
}

fn number(text: &str, pos: Pos) -> Result<f64, SqlParseError> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| perr(format!("bad number '{text}'"), pos))
}

fn primary(cur: &mut Cursor) -> Result<SqlExpr, SqlParseError> {
    let t = cur.next();
    match &t.tok {
        Tok::Number { text, .. } => Ok(SqlExpr::Number(number(text, t.pos)?)),
        Tok::Str(s) => Ok(SqlExpr::Str(s.clone())),
        Tok::LParen => {
            let e = expr(cur)?;
            let close = cur.next();
            if close.tok != Tok::RParen {
                return Err(perr(format!("expected ')', found {}", close.tok), close.pos));
            }
            Ok(e)
        }
        Tok::Ident(word) if word.eq_ignore_ascii_case("case") => {
            let mut whens = Vec::new();
            while cur.eat_keyword("when") {
                let c = expr(cur)?;
                if !cur.eat_keyword("then") {
                    return Err(perr("expected THEN", cur.peek().pos));
                }
                let v = expr(cur)?;
                whens.push((c, v));
            }
            if whens.is_empty() {
                return Err(perr("CASE needs at least one WHEN", cur.peek().pos));
            }
            if !cur.eat_keyword("else") {
                return Err(perr("expected ELSE (CASE without ELSE is not supported)", cur.peek().pos));
            }
            let otherwise = expr(cur)?;
            if !cur.eat_keyword("end") {
                return Err(perr("expected END", cur.peek().pos));
            }
            Ok(SqlExpr::Case {
                whens,
                otherwise: Box::new(otherwise),
            })
        }
        Tok::Ident(word) => {
            if cur.peek().tok == Tok::LParen {
                let func = Func::parse(word)
                    .ok_or_else(|| perr(format!("unknown function '{word}'"), t.pos))?;
                cur.next();
                let mut args = Vec::new();
                if cur.peek().tok != Tok::RParen {
                    args.push(expr(cur)?);
                    while cur.eat(&Tok::Comma) {
                        args.push(expr(cur)?);
                    }
                }
                let close = cur.next();
                if close.tok != Tok::RParen {
                    return Err(perr(format!("expected ')', found {}", close.tok), close.pos));
                }
                return Ok(SqlExpr::Func { func, args });
            }
            if is_keyword(word) {
                return Err(perr(format!("unexpected keyword {}", word.to_ascii_uppercase()), t.pos));
            }
            qualified_tail(cur, word.clone())
        }
        Tok::QuotedIdent(word) => qualified_tail(cur, word.clone()),
        other => Err(perr(format!("expected an expression, found {other}"), t.pos)),
    }
}

/// Continues a name after its first part: `.part` repetitions and an optional `[index]`.
fn qualified_tail(cur: &mut Cursor, first: String) -> Result<SqlExpr, SqlParseError> {
    let mut name = first;
    while cur.peek().tok == Tok::Dot {
        cur.next();
        let part = cur.next();
        match &part.tok {
            Tok::Ident(p) | Tok::QuotedIdent(p) => {
                name.push('.');
                name.push_str(p);
            }
            other => return Err(perr(format!("expected a name after '.', found {other}"), part.pos)),
        }
    }
    if cur.peek().tok == Tok::LBracket {
        cur.next();
        let idx = cur.next();
        let index = match &idx.tok {
            Tok::Number { text, is_float: false } => text
                .parse::<usize>()
                .map_err(|_| perr(format!("bad index '{text}'"), idx.pos))?,
            other => return Err(perr(format!("expected an index, found {other}"), idx.pos)),
        };
        let close = cur.next();
        if close.tok != Tok::RBracket {
            return Err(perr(format!("expected ']', found {}", close.tok), close.pos));
        }
        return Ok(SqlExpr::Indexed { name, index });
    }
    Ok(SqlExpr::Column(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(i: usize) -> SqlExpr {
        SqlExpr::Indexed {
            name: "F".into(),
            index: i,
        }
    }

    #[test]
    fn nested_case_rendering() {
        let e = SqlExpr::if_else(
            SqlExpr::cmp(CmpOp::Gt, f(0), SqlExpr::num(60.0)),
            SqlExpr::if_else(SqlExpr::cmp(CmpOp::Eq, f(1), SqlExpr::num(0.0)), SqlExpr::num(1.0), SqlExpr::num(0.0)),
            SqlExpr::if_else(SqlExpr::cmp(CmpOp::Eq, f(2), SqlExpr::num(1.0)), SqlExpr::num(1.0), SqlExpr::num(0.0)),
        );
        assert_eq!(
            e.render(),
            "CASE WHEN F[0] > 60 THEN (CASE WHEN F[1] = 0 THEN 1 ELSE 0 END) ELSE (CASE WHEN F[2] = 1 THEN 1 ELSE 0 END) END"
        );
        assert_eq!(parse_expr(&e.render()).unwrap(), e);
        assert_eq!(e.case_depth(), 2);
    }

    #[test]
    fn minimal_parentheses_keep_structure() {
        let a = SqlExpr::col("a");
        let b = SqlExpr::col("b");
        let c = SqlExpr::col("c");
        let e = SqlExpr::bin(BinOp::Sub, a.clone(), SqlExpr::bin(BinOp::Sub, b.clone(), c.clone()));
        assert_eq!(e.render(), "a - (b - c)");
        let e2 = SqlExpr::bin(BinOp::Mul, SqlExpr::bin(BinOp::Sub, a, SqlExpr::num(10.0)), SqlExpr::num(2.0));
        assert_eq!(e2.render(), "(a - 10) * 2");
        for e in [e, e2] {
            assert_eq!(parse_expr(&e.render()).unwrap(), e);
        }
        let neg = SqlExpr::bin(BinOp::Mul, b, SqlExpr::num(-3.5));
        assert_eq!(neg.render(), "b * -3.5");
        assert_eq!(parse_expr(&neg.render()).unwrap(), neg);
        let _ = c;
    }

    #[test]
    fn qualified_and_quoted_names() {
        let e = SqlExpr::col("pi.age");
        assert_eq!(e.render(), "pi.age");
        assert_eq!(parse_expr("pi.age").unwrap(), e);
        let odd = SqlExpr::col("my col");
        assert_eq!(odd.render(), "\"my col\"");
        assert_eq!(parse_expr(&odd.render()).unwrap(), odd);
        let kw = SqlExpr::col("t.end");
        assert_eq!(kw.render(), "t.\"end\"");
        assert_eq!(parse_expr(&kw.render()).unwrap(), kw);
    }
}
