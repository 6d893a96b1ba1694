use thiserror::Error;

/// A numeric argument fell outside the domain of a function.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{what}: {detail}")]
pub struct DomainError {
    pub what: &'static str,
    pub detail: String,
}

impl DomainError {
    pub(crate) fn new(what: &'static str, detail: impl Into<String>) -> Self {
        Self {
            what,
            detail: detail.into(),
        }
    }
}

/// Errors raised while reading or validating a configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{key}`: {message}")]
    UnknownKey { key: String, message: String },
    #[error("invalid `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
