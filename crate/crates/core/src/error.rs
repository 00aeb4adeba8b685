use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("variance floor breached: {name} = {value:e} (floor {floor:e})")]
    VarianceFloor { name: String, value: f64, floor: f64 },

    #[error("non-finite log-likelihood at iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "quadrature grid needs {points} points (M^(2r) with M={nodes}, 2r={dim}), \
         budget is {budget}; reduce the node count or the number of joint components"
    )]
    GridBudget {
        points: u128,
        nodes: usize,
        dim: usize,
        budget: usize,
    },

    #[error("posterior weights underflow for observation {observation}: the grid misses the posterior mass")]
    PosteriorUnderflow { observation: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported model file format version {0}")]
    FormatVersion(u32),

    #[error("cannot access {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures to open, read or write a file.
    pub fn is_file(&self) -> bool {
        match self {
            Error::File { .. } | Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }

    /// True for errors raised by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalDomain(_)
                | Error::VarianceFloor { .. }
                | Error::NonFiniteLikelihood { .. }
                | Error::RankDeficient(_)
                | Error::Singular(_)
                | Error::GridBudget { .. }
                | Error::PosteriorUnderflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
