use std::path::PathBuf;

/// Crate-wide error type. Variants map one-to-one onto the failure classes
/// the public operations can hit; messages carry the concrete offending
/// value (id, path, line) so CLI diagnostics stay one line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition (empty input, length
    /// mismatch, wrong sample rate, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The corpus cannot support the requested operation (e.g. fewer
    /// distinct frames than k-means clusters).
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    /// A file did not match its expected format; the message includes the
    /// line number for text formats.
    #[error("parse error: {0}")]
    Parse(String),

    /// A value fell outside its declared domain (e.g. token id ≥ vocab size).
    #[error("out of range: {0}")]
    Range(String),

    /// A speaker does not have enough utterances for the requested
    /// reference sampling.
    #[error("insufficient references: {0}")]
    InsufficientReferences(String),

    /// A loss turned non-finite; the step is aborted and reported.
    #[error("numerical divergence at step {step}: {what} is not finite")]
    NumericalDivergence { step: u64, what: String },

    /// Checkpoint missing, truncated, or of an incompatible version/layout.
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    /// Failed to write an artifact (dump, cache, checkpoint, wav).
    #[error("write failed for {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Generic read-side I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Too few jointly-voiced frames to compare F0 contours.
    #[error("insufficient voiced frames: {0} jointly voiced, need at least 5")]
    InsufficientVoicedFrames(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for write-path I/O errors that should carry the path.
    pub(crate) fn write(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Write { path, source }
    }
}
