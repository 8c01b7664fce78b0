//! In-memory columnar execution of plans and pipelines.

mod exec;
mod io;
mod kernel;
mod table;

pub use exec::{eval_column, eval_expr, execute_plan, run_partitioned, ExecError};
pub use io::{load_csv, parse_csv, CsvError};
pub use kernel::{
    ensemble_raw, ensemble_votes, eval_operator, evaluate_pipeline, evaluate_pipeline_chunked,
    linear_raw, logistic, row_table, EvalError, Predictions, DEFAULT_CHUNK_ROWS,
};
pub use table::{ColumnData, Field, Table, TableError};
