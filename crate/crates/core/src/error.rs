use thiserror::Error;

pub type Result<T, E = SteError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteError {
    /// An evaluation point is not strictly above the expansion origin.
    #[error("domain error: coordinate {coord} is {value}, must exceed origin {origin}")]
    Domain { coord: usize, value: f64, origin: f64 },

    /// A non-positive offset was handed to a moment identity.
    #[error("domain error: offset {0} must be strictly positive")]
    NonPositiveOffset(f64),

    /// The estimator value exceeds the finite floating range. Rescaling
    /// the inputs and the response keeps values representable.
    #[error("numeric range error: |value| ~ exp({log_magnitude:.3}) overflows f64; rescale the data")]
    NumericRange { log_magnitude: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("component {index} is not sampleable: sum of squared correlations is {rho_sq_sum}")]
    NotSampleable { index: usize, rho_sq_sum: f64 },

    #[error("invalid data: {0}")]
    Data(String),

    /// Wraps an error with the 1-based row (or grid point) it came from.
    #[error("row {row}: {source}")]
    AtRow {
        row: usize,
        #[source]
        source: Box<SteError>,
    },

    #[error("fit failed for M = {m}: every start diverged")]
    FitFailed { m: usize },

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl SteError {
    pub fn at_row(self, row: usize) -> Self {
        SteError::AtRow { row, source: Box::new(self) }
    }

    /// Strips any row wrappers.
    pub fn root(&self) -> &SteError {
        match self {
            SteError::AtRow { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for SteError {
    fn from(e: std::io::Error) -> Self {
        SteError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SteError {
    fn from(e: serde_json::Error) -> Self {
        SteError::Serde(e.to_string())
    }
}

impl From<csv::Error> for SteError {
    fn from(e: csv::Error) -> Self {
        SteError::Io(e.to_string())
    }
}
