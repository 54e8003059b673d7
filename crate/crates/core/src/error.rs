use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "tail integrability condition violated: G(t)/t^(p+1) is not integrable on (1, inf) for p = {p}{}",
        match .smallest_admissible {
            Some(q) => format!("; smallest admissible p is {q}"),
            None => String::from("; no admissible p up to the search cap"),
        }
    )]
    ConditionViolation {
        p: u32,
        smallest_admissible: Option<u32>,
    },

    #[error("search exhausted at index {failed_at} (last index achieved: {last_achieved})")]
    NotFound {
        failed_at: usize,
        last_achieved: usize,
    },

    #[error("precision error: {0}")]
    Precision(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
