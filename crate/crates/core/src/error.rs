use chrono::NaiveDate;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected record {asset_id} on {date}: {reason}")]
    RejectedRecord {
        date: NaiveDate,
        asset_id: String,
        reason: String,
    },
    #[error("schema error at row {row}, column {column}: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error in {name}: expected {expected}, got {got}")]
    Dimension {
        name: String,
        expected: String,
        got: String,
    },
    #[error("tokenization error: {0}")]
    Tokenization(String),
    #[error("decoding error: token {token} outside [1, {bins}]")]
    Decoding { token: usize, bins: usize },
    #[error("generation error for kernel {spec}: {reason}")]
    Generation { spec: String, reason: String },
    #[error("training error in {param}: {reason}")]
    Training { param: String, reason: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("regime error: {0}")]
    Regime(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(name: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            name: name.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
