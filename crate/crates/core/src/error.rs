use std::path::PathBuf;

/// Errors produced anywhere in the de-identification engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    /// The edit direction has (numerically) no component tangent to the latent.
    #[error("degenerate direction: edit direction is parallel to the latent (tangent norm {tangent_norm:e})")]
    DegenerateDirection { tangent_norm: f64 },

    #[error("numerical failure in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericalFailure { context: String, step: Option<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("provider '{provider}' failed: {message}")]
    Provider { provider: String, message: String },

    #[error("unknown attribute '{name}'; valid names: {}", valid.join(", "))]
    UnknownAttribute { name: String, valid: Vec<String> },

    #[error("adapter '{name}' is already registered as a {kind}")]
    DuplicateAdapter { kind: &'static str, name: String },

    #[error("no {kind} adapter named '{name}'; registered: {}", registered.join(", "))]
    UnknownAdapter {
        kind: &'static str,
        name: String,
        registered: Vec<String>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn numerical(context: impl Into<String>, step: Option<usize>) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            step,
        }
    }
}
