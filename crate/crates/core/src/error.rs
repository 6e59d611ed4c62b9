use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operation requires a {expected} readout model")]
    ModelKind { expected: &'static str },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("query {0} has no remaining shots")]
    ExhaustedQuery(usize),
    #[error("not enough shots left: requested {requested}, available {available}")]
    BudgetExhausted { requested: usize, available: usize },
    #[error("infeasible upper bounds: they sum to {0} < 1")]
    Infeasible(f64),
    #[error("query space with fixed growth policy cannot grow")]
    Policy,
    #[error("singular parameterization: {0}")]
    Singularity(String),
    #[error("numerical failure at query {query:?}: {msg}")]
    Numerical { query: Option<usize>, msg: String },
    #[error("rabi signal too weak for frequency estimation (max |p| = {0:.4})")]
    WeakSignal(f64),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("value {value} outside the available range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
