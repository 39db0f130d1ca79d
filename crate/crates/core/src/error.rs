use thiserror::Error;

/// Failures reported by the solvers.
///
/// Variants are grouped by [`ErrorKind`] so callers (the CLI in particular)
/// can map them onto exit codes without matching every case.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("R(x, 0) = {r0} <= 0 at x = {x:?}: no positive resource level solves R(x, I) = 0")]
    NoPositiveRoot { x: Vec<f64>, r0: f64 },

    #[error("trait path is not viable at t = {t}: R(x, 0) = {r0} <= 0 at x = {x:?}")]
    PathNotViable { t: f64, x: Vec<f64>, r0: f64 },

    #[error("root solve did not converge after {iterations} iterations (|R| = {residual:e})")]
    RootNotConverged { iterations: usize, residual: f64 },

    #[error("maximum of the field sits on the boundary at {x:?}; enlarge the domain")]
    PeakEscapedDomain { x: Vec<f64> },

    #[error("stencil at {x:?} leaves the grid")]
    OutOfDomain { x: Vec<f64> },

    #[error("time step {dt} violates the CFL bound; use dt <= {suggested_dt}")]
    StepRejected { dt: f64, suggested_dt: f64 },

    #[error("quadratic oracle not applicable: {0}")]
    OracleInapplicable(String),

    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("initial mass I_eps(0) = {mass} must lie in (0, I_M = {i_max})")]
    InadmissibleInitialMass { mass: f64, i_max: f64 },

    #[error("inadmissible initial data: {0}")]
    InadmissibleInitialData(String),

    #[error("model violates structural hypotheses: {0}")]
    HypothesisViolation(String),

    #[error("identical inputs: {0}")]
    DivisionGuard(String),

    #[error("iterate {iteration} left the ball of radius {radius} (distance {distance})")]
    BallEscape {
        iteration: usize,
        radius: f64,
        distance: f64,
    },

    #[error("invariant `{name}` violated: {detail}")]
    InvariantViolation { name: String, detail: String },

    #[error("internal error: {0}")]
    Internal(String),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Hypothesis,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Io { .. } => ErrorKind::Config,
            Error::HypothesisViolation(_) | Error::InadmissibleInitialData(_) => {
                ErrorKind::Hypothesis
            }
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn invariant(name: &str, detail: impl Into<String>) -> Self {
        Error::InvariantViolation {
            name: name.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
