use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values entered or escaped a computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration (run config, synthetic config, class tables).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed dataset or checkpoint content.
    #[error("load error in {path}: {msg}")]
    Load { path: PathBuf, msg: String },

    /// Statistical routine given inputs it cannot handle.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the CLI: 2 for configuration/contract problems,
    /// 3 for numeric failures at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }

    /// Short machine-readable tag used in `error[<code>]:` lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Load { .. } => "load",
            Error::Degenerate(_) => "degenerate",
            Error::Io { .. } => "io",
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
