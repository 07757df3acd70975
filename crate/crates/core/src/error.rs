use crate::month::Month;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{0}: input is empty")]
    Empty(&'static str),

    #[error("loss became non-finite at epoch {epoch}, batch {batch} (loss = {loss})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("network parameters are not finite after {0}")]
    NonFiniteParameters(&'static str),

    #[error(
        "zero relevance denominator at layer {layer}, neuron {neuron}; use a positive stabilizer"
    )]
    ZeroDenominator { layer: usize, neuron: usize },

    #[error("design matrix is singular or not positive definite; try ridge_lambda > 0")]
    SingularDesign,

    #[error("descriptor {0} is constant across the cross-section")]
    DegenerateColumn(&'static str),

    #[error("descriptor {descriptor} has {count} non-missing values; at least 2 required")]
    TooFewValues {
        descriptor: &'static str,
        count: usize,
    },

    #[error("attribution total is zero; relevance mass cancels out")]
    DegenerateTotal,

    #[error("{context}: need at least {required} stocks, got {actual}")]
    TooFewStocks {
        context: &'static str,
        required: usize,
        actual: usize,
    },

    #[error("zero volatility: Sharpe ratio undefined")]
    ZeroVolatility,

    #[error("volatility needs at least 2 months, got {0}")]
    TooFewMonths(usize),

    #[error("insufficient history for {requested}; first feasible month is {first_feasible}")]
    InsufficientHistory {
        requested: Month,
        first_feasible: Month,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate row for ({month}, {stock})")]
    DuplicateRow { month: Month, stock: String },

    #[error("schema mismatch: unexpected columns [{unexpected}], missing columns [{missing}]")]
    SchemaMismatch { unexpected: String, missing: String },

    #[error("unknown stock {0}")]
    UnknownStock(String),

    #[error("unknown month {0}")]
    UnknownMonth(Month),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
