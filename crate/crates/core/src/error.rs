use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable error codes written by the
/// command-line tool, see [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    // ---- file formats ----
    #[error("no manifest.json found in {0}")]
    MissingManifest(PathBuf),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("bad magic in {0}: expected EPB1")]
    BadMagic(PathBuf),
    #[error("ragged CSV {path}: row {row} has {found} columns, expected {expected}")]
    RaggedCsv {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("scout {scout} references source {index}, but only {n_sources} sources exist")]
    IndexOutOfRange {
        scout: String,
        index: usize,
        n_sources: usize,
    },
    #[error("source {index} is assigned to both {first} and {second}")]
    DuplicateSourceAssignment {
        index: usize,
        first: String,
        second: String,
    },
    #[error("invalid value for {field}: {reason}")]
    InvalidRange { field: String, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    // ---- signal processing ----
    #[error("band ({lo}, {hi}) Hz is outside (0, {nyquist}) Hz")]
    BandOutOfRange { lo: f64, hi: f64, nyquist: f64 },
    #[error("signal of {n_samples} samples is too short, need more than {required}")]
    TooShortSignal { n_samples: usize, required: usize },
    #[error("window ({start}, {end}) s lies outside the epoch ({epoch_start}, {epoch_end}) s")]
    WindowOutsideEpoch {
        start: f64,
        end: f64,
        epoch_start: f64,
        epoch_end: f64,
    },
    #[error("series of {n_samples} samples is too short for the wavelet at {freq} Hz ({required} needed)")]
    SeriesTooShort {
        n_samples: usize,
        required: usize,
        freq: f64,
    },
    #[error("no analysis frequency falls in band ({lo}, {hi}) Hz")]
    EmptyBand { lo: f64, hi: f64 },

    // ---- inverse modelling ----
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("linear system is singular after regularisation")]
    SingularSystem,
    #[error("standardisation factor for source {0} is not positive")]
    NonPositiveStandardizer(usize),
    #[error("channel count mismatch: data has {data}, model expects {model}")]
    ChannelCountMismatch { data: usize, model: usize },
    #[error("unknown scout {0}")]
    UnknownScout(String),
    #[error("duplicate name {0}")]
    DuplicateName(String),

    // ---- connectivity ----
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("cannot average an empty group")]
    EmptyGroup,

    // ---- graphs ----
    #[error("graph has {found} nodes, need at least {required}")]
    TooFewNodes { found: usize, required: usize },
    #[error("graph has no edges")]
    NoEdges,

    // ---- learning / clustering ----
    #[error("too few examples: {0}")]
    TooFewExamples(String),
    #[error("k = {k} exceeds the {n_train} training examples")]
    KTooLarge { k: usize, n_train: usize },
    #[error("training data contains fewer than two classes")]
    TooFewClasses,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("k = {k} exceeds the {n_points} points")]
    KExceedsPoints { k: usize, n_points: usize },
    #[error("WCSS curve needs k_max >= 3, got {0}")]
    CurveTooShort(usize),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    // ---- statistics ----
    #[error("paired differences have zero variance but non-zero mean")]
    DegenerateVariance,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable code, the variant name.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingManifest(_) => "MissingManifest",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::BadMagic(_) => "BadMagic",
            Error::RaggedCsv { .. } => "RaggedCsv",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DuplicateSourceAssignment { .. } => "DuplicateSourceAssignment",
            Error::InvalidRange { .. } => "InvalidRange",
            Error::InvalidInput(_) => "InvalidInput",
            Error::MissingInput(_) => "MissingInput",
            Error::Parse { .. } => "Parse",
            Error::BandOutOfRange { .. } => "BandOutOfRange",
            Error::TooShortSignal { .. } => "TooShortSignal",
            Error::WindowOutsideEpoch { .. } => "WindowOutsideEpoch",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::EmptyBand { .. } => "EmptyBand",
            Error::TooFewSamples(_) => "TooFewSamples",
            Error::SingularSystem => "SingularSystem",
            Error::NonPositiveStandardizer(_) => "NonPositiveStandardizer",
            Error::ChannelCountMismatch { .. } => "ChannelCountMismatch",
            Error::UnknownScout(_) => "UnknownScout",
            Error::DuplicateName(_) => "DuplicateName",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::InvalidThreshold(_) => "InvalidThreshold",
            Error::EmptyGroup => "EmptyGroup",
            Error::TooFewNodes { .. } => "TooFewNodes",
            Error::NoEdges => "NoEdges",
            Error::TooFewExamples(_) => "TooFewExamples",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::TooFewClasses => "TooFewClasses",
            Error::EmptyInput(_) => "EmptyInput",
            Error::KExceedsPoints { .. } => "KExceedsPoints",
            Error::CurveTooShort(_) => "CurveTooShort",
            Error::SizeMismatch(_) => "SizeMismatch",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::Io { .. } => "Io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidRange {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
