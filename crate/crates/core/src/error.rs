use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum KpmeError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("particle {index} at {position:?} lies outside the box")]
    OutsideBox { index: usize, position: [f64; 3] },

    #[error("size mismatch in {context}: expected {expected}, got {got}")]
    SizeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} needs {size} entries, above the limit of {limit}")]
    GuardExceeded {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("quadrature rule covers arguments [{min_arg}, {max_arg}] but [1, {required}] is needed")]
    RuleRange {
        min_arg: f64,
        max_arg: f64,
        required: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("communicator failure: {0}")]
    Communicator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KpmeError>;

impl KpmeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KpmeError::Invalid(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            KpmeError::Io(_) | KpmeError::Parse { .. } => 2,
            KpmeError::Numerical(_) => 3,
            _ => 1,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(KpmeError::SizeMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
