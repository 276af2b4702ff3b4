use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("load error: {0}")]
    Load(String),

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("rank-deficient design: column(s) {dependent:?} are linearly dependent on the others")]
    RankDeficient { dependent: Vec<String> },

    #[error("cannot encode design: {0}")]
    Encoding(String),

    #[error("prediction error: {0}")]
    Prediction(String),

    #[error("invalid model document at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
