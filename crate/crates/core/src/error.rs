use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible: radius {radius} below minimum box residual {min_residual}")]
    Infeasible { radius: f64, min_residual: f64 },

    #[error("{what} did not converge within {evals} evaluations")]
    NotConverged { what: &'static str, evals: usize },

    #[error("no sign change of {what} over [{lo}, {hi}]")]
    NoBracket { what: &'static str, lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
