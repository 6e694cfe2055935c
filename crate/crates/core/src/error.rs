use thiserror::Error;

/// Errors raised by the p-adic engines. The `Display` form starts with the
/// variant name so the CLI can report it verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("NotPrime: {0} is not a prime")]
    NotPrime(u64),
    #[error("BudgetExceeded: {needed} points requested, budget is {budget}")]
    BudgetExceeded { needed: String, budget: u64 },
    #[error("DivergentSum: {0}")]
    DivergentSum(String),
    #[error("EmptySet: the set has no members")]
    EmptySet,
    #[error("DomainError: {0}")]
    DomainError(String),
    #[error("InfiniteMeasure: cell has no lower valuation bound")]
    InfiniteMeasure,
    #[error("NotFiberReducible: {0}")]
    NotFiberReducible(String),
    #[error("UndefinedAtPoint: {0}")]
    UndefinedAtPoint(String),
    #[error("InvalidCell: {0}")]
    InvalidCell(String),
    #[error("Unsupported: {0}")]
    Unsupported(String),
    #[error("ParseError at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::NotPrime(_) => "NotPrime",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::DivergentSum(_) => "DivergentSum",
            Error::EmptySet => "EmptySet",
            Error::DomainError(_) => "DomainError",
            Error::InfiniteMeasure => "InfiniteMeasure",
            Error::NotFiberReducible(_) => "NotFiberReducible",
            Error::UndefinedAtPoint(_) => "UndefinedAtPoint",
            Error::InvalidCell(_) => "InvalidCell",
            Error::Unsupported(_) => "Unsupported",
            Error::Parse { .. } => "ParseError",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::DomainError(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
