use std::fmt;
use std::path::Path;

use hyptopic::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONTRACT: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

/// An error message together with the process exit code it maps to.
#[derive(Debug, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Failure::new(EXIT_INPUT, message)
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Failure::new(EXIT_CONTRACT, message)
    }

    pub fn io(path: &Path, e: &std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::input(format!("{}: not found", path.display()))
        } else {
            Failure::input(format!("{}: {e}", path.display()))
        }
    }

    /// Same as `From<Error>`, but input-side failures (unparsable lines,
    /// bad shapes) count as data-contract errors.
    pub fn as_contract(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Config(_) => e.into(),
            other => Failure::contract(other.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Io { path, source } => Failure::io(path, source),
            Error::Config(_) | Error::Parse { .. } | Error::Corpus(_) => {
                Failure::input(e.to_string())
            }
            Error::Shape(_) | Error::Contract(_) | Error::Invariant(_) | Error::Codec(_) => {
                Failure::contract(e.to_string())
            }
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
