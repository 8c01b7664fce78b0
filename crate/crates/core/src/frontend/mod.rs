//! Prediction-query dialect: `SELECT ... FROM ... [JOIN ...] [WHERE ...]`
//! with one `PREDICT` call, either as a scalar function in the select list or
//! as a table-valued function in `FROM`.

mod catalog;
mod parser;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lexer::Pos;
use crate::pipeline::OutPort;
use crate::value::{DType, Value};

pub use catalog::{Catalog, CatalogError, ColumnDef, TableSchema};
pub use parser::parse_query;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontendError {
    #[error("parse error at {pos}: {message}")]
    Parse { message: String, pos: Pos },
    #[error("resolution error at {pos}: {message}")]
    Resolution { message: String, pos: Pos },
    #[error("unsupported at {pos}: {message}")]
    Unsupported { message: String, pos: Pos },
}

impl FrontendError {
    pub fn pos(&self) -> Pos {
        match self {
            FrontendError::Parse { pos, .. }
            | FrontendError::Resolution { pos, .. }
            | FrontendError::Unsupported { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<>")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// The operator with its operands swapped: `1 < a` is `a > 1`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }

    /// Evaluates `lhs op rhs`; mismatched families (string vs number) are false.
    pub fn eval(self, lhs: &Value, rhs: &Value) -> bool {
        lhs.compare(rhs).is_some_and(|o| self.holds(o))
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A resolved column of a base table.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRef {
    /// Table alias (the table name when no alias was given).
    pub relation: String,
    pub column: String,
    pub dtype: DType,
    pub pos: Pos,
}

impl ColumnRef {
    /// The `alias.column` name this column carries through a plan.
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.relation, self.column)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredicateTarget {
    Column(ColumnRef),
    /// A PREDICT output, by binding name.
    Output(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub target: PredicateTarget,
    pub op: CmpOp,
    pub literal: Value,
    pub pos: Pos,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            PredicateTarget::Column(c) => write!(f, "{} {} {}", c.qualified(), self.op, self.literal),
            PredicateTarget::Output(n) => write!(f, "{n} {} {}", self.op, self.literal),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSource {
    pub table: String,
    pub alias: String,
    pub pos: Pos,
}

/// Inner equi-join: `left` belongs to an earlier source, `right` to the
/// source being joined.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinSpec {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Column(ColumnRef),
    Output(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictForm {
    /// `PREDICT(model, ...) AS name` in the select list.
    Udf,
    /// `FROM PREDICT(MODEL = m, DATA = t) WITH (...) AS alias`.
    Tvf { alias: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictInputs {
    Star,
    Columns(Vec<ColumnRef>),
}

/// A named PREDICT output. `dtype` is known only when declared by `WITH`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBinding {
    pub name: String,
    pub port: OutPort,
    pub dtype: Option<DType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSpec {
    pub model_path: String,
    pub form: PredictForm,
    pub inputs: PredictInputs,
    pub outputs: Vec<OutputBinding>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub projections: Vec<Projection>,
    pub sources: Vec<TableSource>,
    pub joins: Vec<JoinSpec>,
    pub predicates: Vec<Predicate>,
    pub predict: PredictSpec,
}

impl QueryAst {
    pub fn output(&self, name: &str) -> Option<&OutputBinding> {
        self.predict.outputs.iter().find(|o| o.name == name)
    }
}

/// Rewrites a table-valued PREDICT into the scalar form. Output bindings keep
/// their `alias.name` names so projections and predicates stay valid.
pub fn normalize_predict(ast: &QueryAst) -> Result<QueryAst, FrontendError> {
    match &ast.predict.form {
        PredictForm::Udf => Ok(ast.clone()),
        PredictForm::Tvf { alias } => {
            if ast.predict.outputs.is_empty() {
                return Err(FrontendError::Parse {
                    message: format!(
                        "PREDICT table function '{alias}' needs a WITH (...) clause declaring its outputs"
                    ),
                    pos: ast.predict.pos,
                });
            }
            let mut out = ast.clone();
            out.predict.form = PredictForm::Udf;
            Ok(out)
        }
    }
}

/// Splits the WHERE conjuncts into predicates over base columns and
/// predicates over PREDICT outputs, keeping their order.
pub fn extract_predicates(ast: &QueryAst) -> (Vec<Predicate>, Vec<Predicate>) {
    ast.predicates
        .iter()
        .cloned()
        .partition(|p| matches!(p.target, PredicateTarget::Column(_)))
}
