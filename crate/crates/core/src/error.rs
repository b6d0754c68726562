use thiserror::Error;

use crate::ode::OdeError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented bound.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },

    #[error("configuration error{}: {message}", location(.key, .line))]
    Config {
        message: String,
        key: Option<String>,
        line: Option<usize>,
    },

    /// The requested engine cannot handle the problem size.
    #[error("{engine} engine supports at most {cap} atoms, got {n}")]
    Capability {
        engine: &'static str,
        n: usize,
        cap: usize,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A physical invariant was violated during evolution.
    #[error("invariant violated at t = {t}: {detail}")]
    Invariant { t: f64, detail: String },

    #[error(transparent)]
    Ode(#[from] OdeError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn location(key: &Option<String>, line: &Option<usize>) -> String {
    match (key, line) {
        (Some(k), Some(l)) => format!(" at line {l}, key `{k}`"),
        (Some(k), None) => format!(" for key `{k}`"),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn param(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for errors caused by user input rather than by a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParam { .. } | Error::Config { .. } | Error::Capability { .. }
        )
    }
}
