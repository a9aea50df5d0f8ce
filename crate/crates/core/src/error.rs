//! Crate-wide error type for validation and numeric failures.
//!
//! File-format errors live in [`crate::io::FormatError`]; everything the
//! numeric modules can reject is covered here.

/// Why an operation could not produce a result.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Not enough samples/rows to perform the operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A feature column has zero variance and cannot be standardized.
    #[error("feature column {column} has zero variance")]
    DegenerateFeature { column: usize },

    /// A physical quantity left its admissible range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Every row of a would-be dataset was excluded.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Identification data does not cover enough distinct speeds.
    #[error("insufficient speed coverage: {found} populated speed bins, {needed} required")]
    SpeedCoverage { found: usize, needed: usize },

    /// Two aligned sequences differ in length.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// The denominator of a relative metric is zero.
    #[error("undefined base: mean absolute reference value is zero")]
    UndefinedBase,

    /// A streamed sample arrived with a non-increasing timestamp.
    #[error("out-of-order sample: t = {t} after t = {previous}")]
    OutOfOrder { previous: f64, t: f64 },

    /// A streamed sample violates the declared sampling interval.
    #[error("sample interval {got} deviates more than 1% from expected {expected}")]
    RateMismatch { expected: f64, got: f64 },

    /// A required per-test dataset is missing from a comparison.
    #[error("missing dataset for test {test_id}")]
    MissingTest { test_id: u8 },

    /// A computation produced a non-finite value.
    #[error("numeric failure in {context}")]
    NumericFailure { context: String },
}

impl Error {
    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Shorthand for [`Error::NumericFailure`].
    pub fn numeric(context: impl Into<String>) -> Self {
        Error::NumericFailure {
            context: context.into(),
        }
    }
}
