use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no records")]
    EmptyInput,
    #[error("unparseable timestamp {value:?} at row {row}")]
    UnparseableTimestamp { row: usize, value: String },
    #[error("grid of length {0} is too short to split (need at least 10 steps)")]
    GridTooShort(usize),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("index {index} is outside the grid of length {len}")]
    IndexOutOfGrid { index: usize, len: usize },

    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("polygon {0:?} has fewer than three distinct vertices")]
    DegeneratePolygon(String),
    #[error("region set is empty")]
    EmptyRegions,
    #[error("malformed GeoJSON: {0}")]
    MalformedGeoJson(String),
    #[error("malformed date {value:?} at line {line}")]
    MalformedDate { line: usize, value: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("insufficient history: need {needed} steps, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("feature matrix has no usable rows")]
    NoUsableRows,
    #[error("horizon {horizon} exceeds grid length {len}")]
    HorizonExceedsGrid { horizon: usize, len: usize },
    #[error("unsupported matrix file: {0}")]
    BadMatrixFile(String),

    #[error("no training rows available")]
    EmptyTraining,
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("matrix has already been transformed by a scaler")]
    AlreadyTransformed,
    #[error("duplicate entity name {0:?}")]
    DuplicateName(String),

    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value in feature {feature} at row {row}")]
    NonFiniteFeature { row: usize, feature: usize },
    #[error("non-finite target at row {row}")]
    NonFiniteTarget { row: usize },
    #[error("operation requires a {expected} model")]
    WrongTask { expected: &'static str },
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("training span contains no nonzero demand")]
    AllZeroTraining,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input to metric")]
    Empty,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("no test rows available")]
    NoTestRows,
    #[error("global-vs-local comparison needs at least two entities")]
    SingleEntity,

    #[error("search space is empty")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("objective failed in trial {trial}: {reason}")]
    ObjectiveFailure { trial: usize, reason: String },
    #[error("no trial completed")]
    NoCompletedTrials,

    #[error("monotonic clock unavailable")]
    ClockUnavailable,
    #[error("predictions changed between benchmark repeats")]
    NondeterministicPrediction,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Toml(e.to_string())
    }
}
