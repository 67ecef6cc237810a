use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infinite mass: {0}")]
    InfiniteMass(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("region is not contained in the sampling window")]
    RegionOutsideWindow,

    #[error("kernel support leaks outside the window: {0}")]
    SupportOutsideWindow(String),

    #[error("arity mismatch: expected {expected}, found {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("contraction index out of range: r = {r}, l = {l} for orders ({p}, {q})")]
    ContractionIndex { r: usize, l: usize, p: usize, q: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("blocks {0} and {1} overlap")]
    OverlappingBlocks(usize, usize),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("csv: {0}")]
    Csv(String),

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("replication {index} (seed {seed:#018x}) failed: {source}")]
    Replication {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("moment condition not met: {0}")]
    MomentCondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
