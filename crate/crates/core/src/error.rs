use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum SpockError {
    #[error("design matrix is rank deficient: numerical rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid neighbor count for area {area}: k = {k}, allowed 1..={max}")]
    InvalidK { area: usize, k: usize, max: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular covariance matrix: {0}")]
    SingularCovariance(String),

    #[error("Cholesky factorization failed: {0}")]
    CholeskyFailure(String),

    #[error("chain diverged: {0}")]
    DivergentChain(String),

    #[error("insufficient draws: have {have}, need at least {need}")]
    InsufficientDraws { have: usize, need: usize },

    #[error("parse error in {file} at line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("unknown area id `{0}`")]
    UnknownAreaId(String),

    #[error("duplicate centroid: areas `{0}` and `{1}` share coordinates")]
    DuplicateCentroid(String, String),

    #[error("area `{0}` has no neighbors (pass --allow-islands to accept)")]
    IsolatedArea(String),

    #[error("negative count {value} for area `{id}` in a Poisson response")]
    NegativeCount { id: String, value: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpockError>;

impl SpockError {
    /// Process exit code for the command-line front end:
    /// 2 input/validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use SpockError::*;
        match self {
            Io(_) | Serde(_) => 4,
            RankDeficient { .. }
            | SingularCovariance(_)
            | CholeskyFailure(_)
            | DivergentChain(_)
            | DegenerateGeometry(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn parse(file: &str, line: usize, msg: impl Into<String>) -> Self {
        SpockError::Parse { file: file.to_string(), line, msg: msg.into() }
    }
}

impl From<csv::Error> for SpockError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => SpockError::Io(io),
            other => SpockError::Parse { file: String::new(), line, msg: format!("{other:?}") },
        }
    }
}
