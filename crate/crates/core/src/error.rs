//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),

    #[error("malformed manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },

    #[error("layer count mismatch: manifest declares {declared} layers but {found} layer files were found")]
    LayerCountMismatch { declared: usize, found: usize },

    #[error("layer {layer} ({file}): {reason}")]
    Layer {
        layer: usize,
        file: String,
        reason: String,
    },

    #[error("{file}: malformed npy: {reason}")]
    Npy { file: String, reason: String },

    #[error("unsupported dtype {dtype} in {file}")]
    UnsupportedDtype { file: String, dtype: String },

    #[error("label set: {0}")]
    Labels(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("k out of range: k = {k} but must satisfy 1 <= k <= N-1 with N = {n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("zero-norm row {row}: cosine similarity undefined")]
    ZeroNormRow { row: usize },

    #[error("constant representation: {0} has zero HSIC with itself")]
    ConstantRepresentation(&'static str),

    #[error("all {0} columns have zero variance; correlation undefined")]
    AllColumnsUndefined(usize),

    #[error("rows of the orthogonal matrix are not unit norm (row {row} has norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },

    #[error("row entropy needs D >= 2, got D = {0}")]
    DimensionTooSmall(usize),

    #[error("singular value decomposition did not converge")]
    SvdNonConvergence,

    #[error("corpus fingerprint mismatch: {x} vs {y}")]
    FingerprintMismatch { x: String, y: String },

    #[error("token count mismatch: {x} vs {y}")]
    TokenCountMismatch { x: usize, y: usize },

    #[error("probe: {0}")]
    Probe(String),

    #[error("invalid metric `{0}`")]
    MetricSpec(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingManifest(_))
    }
}
