//! Process exit codes.

use std::fmt;
use std::path::Path;

use selssm::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;
pub const EXIT_MISMATCH: u8 = 5;
pub const EXIT_GRADCHECK: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }

    /// Core errors about a stored model or its companion files.
    pub fn artifact(e: Error) -> Self {
        match e {
            Error::Io { .. } => e.into(),
            e => Self::new(EXIT_MISMATCH, e.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            Error::DivergedLoss { .. } => EXIT_DIVERGED,
            Error::InvalidConfig(_)
            | Error::InvalidSpec(_)
            | Error::TooFewSamples { .. }
            | Error::EmptySplit(_)
            | Error::EmptyTrainingSet
            | Error::Parse { .. }
            | Error::LabelOutOfRange { .. } => EXIT_CONFIG,
            Error::BadMagic
            | Error::VersionMismatch { .. }
            | Error::ChecksumMismatch { .. }
            | Error::Malformed(_)
            | Error::TokenOutOfRange { .. } => EXIT_MISMATCH,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}
