use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bump support leaks outside the unit disc (|center| + radius = {0})")]
    SupportViolatesD(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("spectral grid is not symmetric under lambda -> 1/lambda")]
    GridNotSymmetric,
    #[error("spectral parameter lambda must be nonzero")]
    ZeroLambda,
    #[error("singular Green's function denominator at k = ({0}, {1})")]
    SingularDenominator(String, String),
    #[error("{what}: no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("interior Dirichlet problem is numerically singular (condition estimate {0:e})")]
    DirichletEigenvalueHit(f64),
    #[error("{what}: singular system (condition estimate {cond:e})")]
    SingularSystem { what: String, cond: f64 },
    #[error("the two rho equations disagree (relative difference {0:e})")]
    InconsistentPair(f64),
    #[error("datum does not decay: tail mass fraction {0:e} beyond the grid")]
    TailTooHeavy(f64),
    #[error("degenerate fit: all errors vanish")]
    DegenerateFit,
    #[error("insufficient span: need at least 4 records over 2 decades of delta")]
    InsufficientSpan,
    #[error("{0} self-test check(s) failed")]
    SelfTestFailed(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

/// Pipeline stage, used to annotate errors from long runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Forward,
    Dtn,
    Scattering,
    Reconstruction { z: (f64, f64), equation: String },
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Forward => write!(f, "forward solve"),
            Stage::Dtn => write!(f, "DtN assembly"),
            Stage::Scattering => write!(f, "scattering data"),
            Stage::Reconstruction { z, equation } => {
                write!(f, "reconstruction at z = ({}, {}) [{}]", z.0, z.1, equation)
            }
        }
    }
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for config/format problems, false for numerical failures.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Io(_) | Error::InvalidGrid(_) => true,
            Error::SupportViolatesD(_) | Error::GridNotSymmetric => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
