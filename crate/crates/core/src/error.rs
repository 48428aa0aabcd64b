//! Crate-wide error type.
//!
//! Every error carries an [`ErrorClass`] so front-ends (CLI, FFI) can map
//! failures onto a stable exit-code taxonomy without string matching:
//! usage errors (bad flags or config values), data errors (unreadable or
//! invalid inputs), and numerical errors (degenerate linear algebra).

use std::path::PathBuf;

/// Coarse failure category, used for CLI exit codes and FFI status codes.
///
/// `Usage` maps to exit 1, `Data` to exit 2, `Numerical` to exit 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty file: {path}")]
    EmptyFile { path: PathBuf },

    #[error("malformed header: {detail}")]
    MalformedHeader { detail: String },

    #[error("inconsistent row width at row {row}: expected {expected} fields, got {got}")]
    RowWidth {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-numeric coordinate at row {row}: {value:?}")]
    BadCoordinate { row: usize, value: String },

    #[error("non-finite coordinate{}: {value}", row_suffix(.row))]
    NonFiniteCoordinate { row: Option<usize>, value: f64 },

    #[error("duplicate utt_id{}: {utt_id:?}", row_suffix(.row))]
    DuplicateUttId { row: Option<usize>, utt_id: String },

    #[error("invalid identifier {id:?} in field {field} (allowed: [A-Za-z0-9_.-]+){}", row_suffix(.row))]
    BadIdentifier {
        field: &'static str,
        id: String,
        row: Option<usize>,
    },

    #[error("empty set")]
    EmptySet,

    #[error("zero-norm vector for utterance {utt_id:?}")]
    ZeroNorm { utt_id: String },

    #[error("zero-norm enrollment mean for speaker {spk_id:?}")]
    ZeroNormMean { spk_id: String },

    #[error("pseudo-speaker vector has zero norm ({detail})")]
    ZeroNormPseudo { detail: String },

    #[error("malformed {what} line at row {row}: {detail}")]
    BadLine {
        what: &'static str,
        row: usize,
        detail: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("speaker {spk_id:?} has {got} utterance(s); {needed} required")]
    SpeakerTooFew {
        spk_id: String,
        got: usize,
        needed: usize,
    },

    #[error("unknown speaker {spk_id:?}")]
    UnknownSpeaker { spk_id: String },

    #[error("unknown utterance {utt_id:?}")]
    UnknownUtterance { utt_id: String },

    #[error("unresolvable trial ({enroll_spk} vs {test_utt}): {detail}")]
    UnresolvableTrial {
        enroll_spk: String,
        test_utt: String,
        detail: String,
    },

    #[error("no target trials possible: enrollment and test sets share no speaker")]
    NoTargetTrials,

    #[error("utterance id universe mismatch between sets: {detail}")]
    IdUniverseMismatch { detail: String },

    #[error(
        "within-class scatter matrix is singular (ridge = {ridge}); retry with a positive ridge"
    )]
    SingularScatter { ridge: f64 },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("missing counterpart row in report: {detail}")]
    MissingCondition { detail: String },

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl Error {
    /// Classify for exit-code / status-code mapping.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig { .. } | Error::Json(_) => ErrorClass::Usage,
            Error::SingularScatter { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid_config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
