use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("non-positive state: {0}")]
    NonPositiveState(String),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("functional `{0}` was not recorded in the batch")]
    MissingFunctional(&'static str),
    #[error("unsupported measure change {from} -> {to}")]
    UnsupportedMeasurePair { from: String, to: String },
    #[error("measure {0} is not defined for this model")]
    UnsupportedMeasure(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("degenerate observation: {0}")]
    DegenerateObservation(String),
    #[error("parse error at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },
    #[error("validation error: {0}")]
    ValidationError(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
