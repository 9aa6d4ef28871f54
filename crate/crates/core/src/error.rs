use std::path::PathBuf;

use thiserror::Error;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by failure class; [`Error::exit_code`] maps each
/// class onto the CLI's exit-code table.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("missing artifact file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    AlreadyExists(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "malformed record budget exceeded: {malformed} of {lines} lines malformed \
         (budget {budget:.2}%), first failure at line {first_line}, last at line {last_line}"
    )]
    MalformedBudgetExceeded {
        malformed: u64,
        lines: u64,
        budget: f64,
        first_line: u64,
        last_line: u64,
    },

    #[error("raw token streams need assistant delimiters (--assistant-start/--assistant-end)")]
    MissingDelimiters,

    #[error("invalid delimiter spec: {0}")]
    InvalidDelimiters(&'static str),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("token id {token} is out of range for vocabulary size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: u64 },

    #[error("corpus is empty: no assistant tokens were counted")]
    EmptyCorpus,

    #[error("token stream is empty")]
    EmptyStream,

    #[error("vocabulary size mismatch: {left} vs {right}")]
    VocabSizeMismatch { left: u64, right: u64 },

    #[error("k = {k} exceeds the vocabulary size {vocab_size}")]
    KTooLarge { k: u64, vocab_size: u64 },

    #[error("k = {k} lies outside the search bounds [{k_min}, {k_max}]")]
    KOutOfBounds { k: u64, k_min: u64, k_max: u64 },

    #[error("{forced} forced tokens do not fit in a budget of k = {k}")]
    ForcedExceedsK { forced: usize, k: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "no trial satisfied the coverage constraint c_min = {c_min}; best coverage seen was \
         {max_coverage:.6} at k = {k_at_max} (lower c_min or raise k_max)"
    )]
    InfeasibleStudy {
        c_min: f64,
        max_coverage: f64,
        k_at_max: u64,
    },

    #[error("sample size {size} exceeds the corpus record count {records}")]
    SizeExceedsCorpus { size: usize, records: usize },

    #[error("hash mismatch for {file}: expected {expected}, found {actual}")]
    HashMismatch {
        file: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invariant violation: {0}")]
    InvariantViolation(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure class: 2 I/O, 3 input format,
    /// 4 infeasible, 5 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FileNotFound(_)
            | Error::MissingFile(_)
            | Error::AlreadyExists(_)
            | Error::Io { .. } => 2,
            Error::MalformedBudgetExceeded { .. }
            | Error::MissingDelimiters
            | Error::InvalidDelimiters(_)
            | Error::Format(_)
            | Error::TokenOutOfRange { .. }
            | Error::EmptyCorpus
            | Error::EmptyStream
            | Error::VocabSizeMismatch { .. }
            | Error::KTooLarge { .. }
            | Error::KOutOfBounds { .. }
            | Error::ForcedExceedsK { .. }
            | Error::InvalidConfig(_)
            | Error::SizeExceedsCorpus { .. } => 3,
            Error::InfeasibleStudy { .. } => 4,
            Error::HashMismatch { .. } | Error::InvariantViolation(_) => 5,
        }
    }
}
