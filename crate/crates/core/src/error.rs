use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at row {row}, column `{column}`: cannot parse {token:?}")]
    Parse {
        row: usize,
        column: String,
        token: String,
    },
    #[error("ingestion error at row {row}: expected {expected} fields, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("imputation error: column `{0}` has no observed training values")]
    Imputation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by bad inputs rather than by the library.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Training(_) | Error::Model(_) | Error::Capacity(_))
    }
}
