use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Domain(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("observation {row} has zero likelihood under the model")]
    ZeroMass { row: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("bread matrix is singular (condition number {condition:.3e}); near-null direction: {directions}")]
    SingularBread { condition: f64, directions: String },

    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;
