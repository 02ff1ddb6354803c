use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("insufficient data: {found} jointly valid pixels, {required} required")]
    InsufficientData { found: usize, required: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("mask `{0}` selects no valid pixels")]
    EmptyMask(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid scene spec field `{field}`: {message}")]
    Spec { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Self {
        Error::Dimension(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
    }
}
