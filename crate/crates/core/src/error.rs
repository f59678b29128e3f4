use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("non-finite value in layer `{layer}` at sample {sample}")]
    NonFinite { layer: String, sample: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("class {0} has no training samples")]
    EmptyClass(usize),

    #[error("training sample {0} is unlabeled")]
    UnlabeledSample(usize),

    #[error("degenerate scale for layer `{layer}`: training maximum {value:e} is too close to zero")]
    DegenerateScale { layer: String, value: f64 },

    #[error("reference trajectory has zero norm")]
    DegenerateReference,

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("coordinate {0} has zero variance")]
    ZeroVariance(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by malformed or unusable input data, as opposed
    /// to bad arguments or configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_) | Error::InvalidConfig(_))
    }
}
