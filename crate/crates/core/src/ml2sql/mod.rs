//! Compiles ML operators into SQL expressions.

mod compile;
mod expr;
mod statement;

pub use compile::{
    compile_operator, compile_pipeline_to_sql, compile_plan_to_sql, compile_tree, compile_tree_with, literal,
    CompiledPipeline, Dialect, Ml2SqlConfig, Ml2SqlError,
};
pub use expr::{parse_expr, render_alias, render_name, BinOp, Func, SqlExpr, SqlParseError};
pub use statement::{
    lower_statement, parse_statement, render_sql, sql_to_plan, FromClause, LowerError, SelectItem, Statement,
    TableRef,
};
