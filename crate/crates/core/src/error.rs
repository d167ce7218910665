use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration problems, data/format problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or emptiness violation on a vector/matrix argument.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A class label outside the valid range.
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// NaN/Inf where a finite value is required, or a refused update.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration value or inconsistent settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that cannot be processed (empty split, missing modality, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Data that is technically well-formed but unusable (e.g. all points identical).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// An index referring to a nonexistent item.
    #[error("index error: {0}")]
    Index(String),

    /// Malformed serialized payload; `offset` is the byte position of the problem.
    #[error("format error at offset {offset}: {detail}")]
    Format { offset: usize, detail: String },

    /// A metric that is undefined for the given inputs (e.g. no relevant items).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
