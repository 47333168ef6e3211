use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unknown phone symbol `{0}`")]
    UnknownPhone(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("markup error: {0}")]
    Markup(String),
    #[error("split violation: {0}")]
    Split(String),
    #[error("degenerate feature matrix: phones `{0}` and `{1}` have identical columns")]
    DegenerateMatrix(String, String),
    #[error("incomplete feature table: {0}")]
    IncompleteTable(String),
    #[error("invalid feature table: {0}")]
    InvalidTable(String),
    #[error("empty reference sequence")]
    EmptyReference,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
