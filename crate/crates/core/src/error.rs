use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("hyperplane tie: <w, 2h - 1> is exactly zero, resample w")]
    Tie,

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error("construction failed after {attempts} attempts: {reason}")]
    Construction { attempts: usize, reason: String },

    #[error("movie-genre matrix is rank deficient: column {column} is a combination of earlier columns")]
    RankDeficient { column: usize },

    #[error("linear program infeasible for row {row}")]
    Infeasible { row: usize },

    #[error("solver did not converge: {message} (best residual {best_residual:e})")]
    Solver { message: String, best_residual: f64 },

    #[error("hinge minimisation did not reach tolerance: duality gap {gap:e} after {iterations} iterations")]
    Convergence {
        gap: f64,
        iterations: usize,
        best_objective: f64,
        best_w: Vec<f64>,
    },

    #[error("sum of emitted movie vectors is exactly zero")]
    DegenerateSample,

    #[error("inconsistent data: {0}")]
    DataInconsistency(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("invalid config: {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension { expected, found })
        }
    }
}
