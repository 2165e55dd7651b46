use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input line. `line` is 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input that parses but violates a structural invariant (duplicate year,
    /// non-contiguous extension, bad region code, ...).
    #[error("{0}")]
    Structure(String),

    /// Data that cannot support the requested computation (empty sample,
    /// missing column, non-positive sea level).
    #[error("{0}")]
    Data(String),

    #[error("unknown model specification `{0}`")]
    UnknownSpec(String),

    #[error("column `{0}` is linearly dependent on the preceding regressors")]
    RankDeficient(String),

    #[error("fixed-effect absorption did not converge after {iterations} sweeps (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("cluster dimension `{0}` has a single cluster; variance is undefined")]
    SingleCluster(String),

    #[error("missing coefficient `{0}`")]
    MissingCoefficient(String),

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical core rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::NoConvergence { .. }
                | Error::SingleCluster(_)
                | Error::Numerical(_)
        )
    }

    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Structure(_) => "structure",
            Error::Data(_) => "data",
            Error::UnknownSpec(_) => "unknown_spec",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NoConvergence { .. } => "no_convergence",
            Error::SingleCluster(_) => "single_cluster",
            Error::MissingCoefficient(_) => "missing_coefficient",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
