use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("coupling error: {0}")]
    Coupling(String),
    #[error("run aborted at step {step}: non-finite values after last valid time t = {last_valid_t}")]
    Aborted { step: usize, last_valid_t: f64 },
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
