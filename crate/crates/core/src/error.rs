use thiserror::Error;

/// Errors surfaced by the estimators, the censored-data routines, and the
/// simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no data: the dataset has no rows")]
    NoData,
    #[error("malformed row {row}: expected {expected} cells, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("bad cell at row {row}: {detail}")]
    BadCell { row: usize, detail: String },
    #[error("bad parameter definition '{param}': component {component} out of range for dimension {dim}")]
    BadParameter {
        param: String,
        component: usize,
        dim: usize,
    },
    #[error("parameter '{param}' reads component {component}, which is missing in this row")]
    ComponentMissing { param: String, component: usize },
    #[error("parameter '{param}' evaluated to a non-finite value")]
    NonFiniteValue { param: String },
    #[error("pattern must observe at least one of its {q} components")]
    AllMissingPattern { q: usize },
    #[error("covariance inestimable for pattern {pattern}: subsample size {j} is too small")]
    CovarianceInestimable { pattern: String, j: usize },
    #[error("no correction possible: no usable child estimates share a parameter with this node")]
    NoCorrectionPossible,
    #[error("no complete cases: the all-observed pattern is empty")]
    NoCompleteCases,
    #[error("no estimable CDF: the sample contains no events")]
    NoEvents,
    #[error("invalid time at observation {index}: times must be positive and finite")]
    InvalidTime { index: usize },
    #[error("invalid variance: variances must be positive and finite")]
    InvalidVariance,
    #[error("invalid correlation: rho must lie in (-1, 1]")]
    InvalidCorrelation,
    #[error("degenerate variance: the closed form is undefined here")]
    DegenerateVariance,
    #[error("singular system: the closed-form bracket matrix is not invertible")]
    SingularSystem,
    #[error("invalid population: covariance must be symmetric positive definite")]
    InvalidPopulation,
    #[error("ladder too short: the convergence probe needs at least 3 sizes")]
    LadderTooShort,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("estimator '{0}' is not applicable to this study")]
    EstimatorNotApplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
