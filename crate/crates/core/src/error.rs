use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {0:e} is below the 1e-12 floor")]
    ZeroVector(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("drift statistics need at least 2 views, got {0}")]
    TooFewViews(usize),

    #[error("embedding is not unit-norm (norm = {0})")]
    NonUnitEmbedding(f64),

    #[error("unsupported augmentation kind: {0}")]
    UnsupportedKind(String),

    #[error("unknown augmentation suite `{0}`")]
    UnknownSuite(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("encoder produced a non-finite value")]
    NonFiniteOutput,

    #[error("no stored embedding for sample {sample_id}, view `{view_id}`")]
    MissingKey { sample_id: u64, view_id: String },

    #[error("this encoder does not provide gradients")]
    GradientUnsupported,

    #[error("class embeddings {0} and {1} are near-duplicates (cosine {2:.6})")]
    DegenerateHead(usize, usize, f64),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),

    #[error("file is truncated")]
    TruncatedFile,

    #[error("stored vector norm {0} is outside the accepted range")]
    NormOutOfRange(f64),

    #[error("invalid geometry {0}x{1}x{2}")]
    InvalidGeometry(usize, usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
