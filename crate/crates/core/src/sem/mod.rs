//! Covariance-structure models: model language, ML and DWLS estimation,
//! fit indices, standardized solution and residual diagnostics. A CFA is a
//! model without regressions.

pub mod estimate;
pub mod model;
pub mod parser;

use thiserror::Error;

pub use estimate::{
    fit, fit_dwls, fit_ml, ml_objective, BootstrapSe, Convergence, Estimator, FitOptions, ParamEstimate,
    ResidualReport, SampleMoments, SampleScale, SemFit,
};
pub use model::{parse_model, Identification, Matrices, ParamKind, Parameter, SemModel};
pub use parser::{parse_statements, Op, ParseError, Statement};

#[derive(Debug, Error)]
pub enum SemError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("line {line}, column {column}: unknown name `{name}`")]
    UnknownName { name: String, line: usize, column: usize },
    #[error("line {line}, column {column}: indicator `{indicator}` claimed by both `{first}` and `{second}`")]
    DuplicateMeasurement {
        indicator: String,
        first: String,
        second: String,
        line: usize,
        column: usize,
    },
    #[error("line {line}: duplicate parameter `{label}`")]
    DuplicateParameter { label: String, line: usize },
    #[error("line {line}, column {column}: {message}")]
    Invalid { line: usize, column: usize, message: String },
    #[error("cyclic regressions: {}", path.join(" -> "))]
    Cycle { path: Vec<String> },
    #[error("model defines no factors")]
    EmptyModel,
    #[error("parameter vector has length {got}, expected {expected}")]
    ParameterLength { expected: usize, got: usize },
    #[error("matrix `{0}` is singular")]
    Singular(&'static str),
    #[error("indicator `{0}` is not in the data")]
    MissingIndicator(String),
    #[error("model is not identified: df = {df}")]
    NegativeDf { df: i64 },
    #[error("{n_used} complete observations for {n_free} free parameters")]
    TooFewObservations { n_used: usize, n_free: usize },
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("zero weight for moment {0}: its fourth-moment variance estimate vanishes")]
    ZeroWeight(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
