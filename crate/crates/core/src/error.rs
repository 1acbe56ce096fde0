use thiserror::Error;

use crate::pli::GpliViolation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("Lyapunov operator is singular or ill-conditioned (not Hurwitz; spectral abscissa {abscissa:.3e})")]
    IllConditioned { abscissa: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,
    #[error("matrix is singular")]
    Singular,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqrError {
    #[error("unstable gain: closed-loop spectral abscissa {abscissa:.6e} is not negative")]
    UnstableGain { abscissa: f64 },
    #[error("gain k = {k} is outside the admissible set k > a = {a}")]
    OutsideAdmissible { k: f64, a: f64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("Newton-Kleinman iteration did not converge after {0} steps")]
    RiccatiNoConvergence(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OverparamError {
    #[error("kappa = {kappa} is smaller than the state dimension {n}")]
    KappaTooSmall { kappa: usize, n: usize },
    #[error("could not draw a well-conditioned full-column-rank factor in {0} attempts")]
    RankFailure(usize),
    #[error("no admissible scale found within {0} geometric steps")]
    NoAdmissibleScale(usize),
    #[error("invalid factored gain: {0}")]
    Shape(String),
    #[error(transparent)]
    Lqr(#[from] LqrError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("initial point is not admissible: {0}")]
    Inadmissible(String),
    #[error(transparent)]
    Lqr(#[from] LqrError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PliError {
    #[error("gamma = {gamma} violates gamma > max(0, 4a) = {bound}")]
    OutsideHypothesis { gamma: f64, bound: f64 },
    #[error("trajectory too short: {usable} usable points, need at least {required}")]
    TrajectoryTooShort { usable: usize, required: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient inequality violated: {0}")]
    Violation(Box<GpliViolation>),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config parse error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("experiment check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error(transparent)]
    Overparam(#[from] OverparamError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Pli(#[from] PliError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
