//! Optimizer and executor for prediction queries: SQL queries that invoke a
//! trained model pipeline through `PREDICT`.

pub mod driver;
pub mod executor;
pub mod fixtures;
pub mod frontend;
pub mod ir;
pub mod lexer;
pub mod ml2dnn;
pub mod ml2sql;
pub mod optimizer;
pub mod pipeline;
pub mod strategy;
pub mod value;
use std::path::PathBuf;

/// Any failure surfaced by the library, classified for exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Catalog(#[from] frontend::CatalogError),
    #[error(transparent)]
    Query(#[from] frontend::FrontendError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Stats(#[from] optimizer::StatsError),
    #[error(transparent)]
    Csv(#[from] executor::CsvError),
    #[error(transparent)]
    Predictor(#[from] strategy::PredictorFormatError),
    #[error(transparent)]
    Ir(#[from] ir::IrError),
    #[error(transparent)]
    Exec(#[from] executor::ExecError),
    #[error(transparent)]
    Ml2Sql(#[from] ml2sql::Ml2SqlError),
    #[error(transparent)]
    Ml2Dnn(#[from] ml2dnn::Ml2DnnError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Whether the failure stems from the caller's inputs rather than a
    /// defect in the library.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Catalog(_)
            | Error::Query(_)
            | Error::Pipeline(_)
            | Error::Stats(_)
            | Error::Csv(_)
            | Error::Predictor(_)
            | Error::Usage(_) => true,
            Error::Ir(e) => matches!(e, ir::IrError::Bind(_)),
            Error::Exec(e) => matches!(e, executor::ExecError::Coverage(_)),
            Error::Ml2Sql(_) | Error::Ml2Dnn(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_split_into_user_and_internal() {
        assert!(Error::Usage("x".into()).is_user_error());
        assert!(Error::Ir(ir::IrError::Bind("x".into())).is_user_error());
        assert!(!Error::Ir(ir::IrError::Cycle(vec![])).is_user_error());
        assert!(Error::Exec(executor::ExecError::Coverage("x".into())).is_user_error());
        assert!(!Error::Exec(executor::ExecError::Plan("x".into())).is_user_error());
        assert!(!Error::Ml2Sql(ml2sql::Ml2SqlError::Unsupported("x".into())).is_user_error());
    }
}
