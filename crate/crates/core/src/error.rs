use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("fiberwise Hessian not positive definite: {0}")]
    Convexity(String),

    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),

    #[error("solution blow-up detected, last reached time t = {t}")]
    Blowup { t: f64 },

    #[error("section invalid: {0}")]
    SectionInvalid(String),

    #[error("not a two-way segment: {0}")]
    NotTwoWay(String),

    #[error("inconclusive verdict: {0}")]
    Inconclusive(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
