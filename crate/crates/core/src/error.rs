use thiserror::Error;

/// Errors raised by the registration library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("underdetermined: need at least 3 correspondences, got {0}")]
    Underdetermined(usize),
    #[error("insufficient residuals: need at least 2, got {0}")]
    InsufficientResiduals(usize),
    #[error("matrix is not a rotation (orthogonality residual {orthogonality:.3e}, det {det})")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("infeasible scene spec: {0}")]
    InfeasibleScene(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fragmentation failed: {0}")]
    Fragmentation(String),
    #[error("no viable clusters")]
    NoViableClusters,
    #[error("cluster {cluster} has {size} points, fewer than 3")]
    ClusterTooSmall { cluster: usize, size: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
