use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("knot placement failed: quantile level {level} collides with the previous knot at {knot}")]
    KnotCollision { level: f64, knot: f64 },

    #[error("t = {t} lies outside the basis range [{lower}, {upper}]")]
    OutOfRange { t: f64, lower: f64, upper: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("constraint region is infeasible: {0}")]
    Infeasible(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("{step} failed at iteration {iteration}: {source}")]
    Step {
        step: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data validation error: {0}")]
    Validation(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: &'static str, iteration: usize) -> Error {
        Error::Step {
            step,
            iteration,
            source: Box::new(self),
        }
    }
}
