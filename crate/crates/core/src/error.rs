use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("log of non-positive value {value} at flat index {index}")]
    NonPositiveLog { index: usize, value: f64 },
    #[error("reduction over an empty axis")]
    EmptyReduction,
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cyclic circuit graph through unit {0}")]
    Cyclic(usize),
    #[error("units are not topologically ordered: unit {unit} references later unit {child}")]
    NotTopological { unit: usize, child: usize },
    #[error("circuit is not smooth and decomposable: {0}")]
    InvalidStructure(String),
    #[error("observed value {value} outside the support of variable {var}")]
    OutsideSupport { var: usize, value: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
