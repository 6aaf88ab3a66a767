use rrx_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    Length { len: usize, max: usize },
    #[error("invalid span ({start}, {end}) for a query of {len} tokens")]
    Span { start: usize, end: usize, len: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn json_err(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> CoreError {
    let context = context.into();
    move |source| CoreError::Json { context, source }
}
