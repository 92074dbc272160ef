use std::path::PathBuf;

use crate::quantifiers::Quantifier;

/// Every failure the library can report. Each malformed-input class maps to
/// its own variant so callers (and the CLI exit-code mapping) can tell them
/// apart without string matching.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // tensor container
    #[error("bad magic bytes: expected UQT1")]
    BadMagic,
    #[error("file truncated inside the header")]
    TruncatedHeader,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("header shape {shape:?} does not match kind {kind}")]
    ShapeMismatch { kind: &'static str, shape: Vec<usize> },
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("softmax entry {value} at input {input}, sample {sample} lies outside [0, 1]")]
    SoftmaxEntryOutOfRange {
        input: usize,
        sample: usize,
        value: f32,
    },
    #[error("softmax row sum {sum} exceeds tolerance at input {input}, sample {sample}")]
    SoftmaxRowSum { input: usize, sample: usize, sum: f32 },

    // labels and manifests
    #[error("labels: expected header `index,label`, found `{0}`")]
    LabelHeader(String),
    #[error("labels: non-contiguous index {found} (expected {expected})")]
    NonContiguousIndex { expected: usize, found: usize },
    #[error("labels: duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("labels: cannot parse line {line}: {reason}")]
    LabelParse { line: usize, reason: String },
    #[error("labels: class out of range: {label} not in [0, {classes})")]
    ClassOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("manifest: {0}")]
    Manifest(String),

    // quantifiers
    #[error("{quantifier} expects a {expected} tensor")]
    WrongKind {
        quantifier: Quantifier,
        expected: &'static str,
    },
    #[error("{quantifier} requires {requirement}, got {got} samples")]
    SampleCount {
        quantifier: Quantifier,
        requirement: &'static str,
        got: usize,
    },
    #[error("sample prefix {prefix} exceeds the {available} available samples")]
    PrefixTooLarge { prefix: usize, available: usize },
    #[error("negative predicted variance {value} at input {input}")]
    NegativeVariance { input: usize, value: f32 },
    #[error("unknown quantifier `{0}`")]
    UnknownQuantifier(String),

    // supervisor
    #[error("epsilon {0} outside the open interval (0, 1)")]
    EpsilonOutOfRange(f64),
    #[error("no uncertainties to calibrate on")]
    EmptyCalibration,
    #[error("threshold was calibrated for {threshold}, assessments come from {assessments}")]
    QuantifierMismatch {
        threshold: Quantifier,
        assessments: Quantifier,
    },
    #[error("regression supervision needs an acceptable-imprecision bound")]
    MissingImprecision,
    #[error("correct-only calibration needs validation labels")]
    MissingLabels,
    #[error("labels kind does not match the assessments")]
    LabelKindMismatch,

    // metrics
    #[error("empty input")]
    EmptyInput,
    #[error("beta must be > 0, got {0}")]
    InvalidBeta(f64),
    #[error("degenerate objective bounds: lower {lower} must be < upper {upper}")]
    DegenerateBounds { lower: f64, upper: f64 },
    #[error("acceptance rate {0} outside [0, 1]")]
    DeltaOutOfRange(f64),
    #[error("{0} requires both malicious and benign inputs")]
    SingleClass(&'static str),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    // analysis
    #[error("group `{group}` is missing competitor `{competitor}`")]
    MissingCompetitor { group: String, competitor: String },
    #[error("group `{group}` has duplicate competitor `{competitor}`")]
    DuplicateCompetitor { group: String, competitor: String },
    #[error("grid of {rows}x{cols} is smaller than the {window}x{window} window")]
    GridTooSmall {
        rows: usize,
        cols: usize,
        window: usize,
    },
    #[error("grid is not rectangular")]
    RaggedGrid,
    #[error("missing grid cell at row {row}, column {col}")]
    MissingCell { row: usize, col: usize },
    #[error("window size must be odd and >= 1, got {0}")]
    InvalidWindow(usize),
    #[error("sample count {k} outside [2, {max}]")]
    SampleCountOutOfRange { k: usize, max: usize },

    // synthgen
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("oracle instance of size {0} exceeds the limit of 12")]
    OracleTooLarge(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
