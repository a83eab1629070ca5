use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the fiber atlas library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("streamline must have at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("zero-length streamline")]
    ZeroLengthStreamline,
    #[error("non-finite coordinate in streamline")]
    NonFiniteCoordinate,
    #[error("scalar channel `{name}` has {got} values for {expected} points")]
    ScalarLength {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("scalar channel `{name}` value {value} outside [{lo}, {hi}]")]
    ScalarRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("missing scalar channel `{0}`")]
    MissingChannel(String),
    #[error("singular transform (|det| = {0:e})")]
    SingularTransform(f64),
    #[error("fiber point counts differ: {0} vs {1}")]
    PointCountMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("affinity matrix has numerical rank {achievable}, below the {requested} eigenpairs requested")]
    RankDeficient { requested: usize, achievable: usize },
    #[error("rank-deficient design matrix: column `{column}` is collinear with {previous:?}")]
    CollinearDesign { column: String, previous: Vec<String> },
    #[error("degenerate paired sample (zero variance of differences)")]
    DegeneratePairedSample,
    #[error("empty cohort")]
    EmptyCohort,
    #[error("degenerate subject `{0}`: all sampled fibers collapse to a single point")]
    DegenerateSubject(String),
    #[error("atlas has no anatomical labels")]
    UnlabeledAtlas,
    #[error("reference atlas cluster {0} is unlabeled")]
    UnlabeledReferenceCluster(usize),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed {format} file {path}: {reason}")]
    Format {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Failure modes specific to reading an atlas bundle directory.
#[derive(Debug, Error)]
pub enum BundleError {
    #[error("not an atlas bundle: {0}")]
    NotAnAtlasBundle(String),
    #[error("atlas bundle format version {found} is not supported (this build reads {supported})")]
    VersionMismatch { found: String, supported: String },
    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },
    #[error("truncated array file {file}: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
