use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("arithmetic overflow in time {op}")]
    Overflow { op: &'static str },
    #[error("cannot parse {what}")]
    Parse { what: &'static str },
    #[error("malformed task: {0} does not hold")]
    InvalidTask(&'static str),
    #[error("empty input series")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("series was recorded in degraded mode; refusing feasibility verdict")]
    DegradedSeries,
    #[error("clock failure (errno {0})")]
    Clock(i32),
}
