use thiserror::Error;

/// Errors produced by model construction, certification, and decoding.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix dimensions do not satisfy the operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A matrix required to have full column rank does not.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// Grid graph is disconnected or otherwise topologically unusable.
    #[error("topology error: {0}")]
    Topology(String),

    /// Invalid configuration (missing slack, bad sensor reference, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data; `line` is 1-based (header is line 1).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// Input contained no usable data.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Combinatorial enumeration would exceed the subset guard.
    #[error("enumeration too large: {0} subsets exceeds guard of {1}")]
    TooLarge(u128, u128),

    /// Scalar argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure (factorization, solver breakdown).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Constraint set is certifiably empty.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Support enumeration found no sparse error explaining the data.
    #[error("no feasible support within sparsity {0}")]
    NoFeasibleSupport(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
