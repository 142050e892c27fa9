//! Process exit codes and the error type every subcommand returns.

use std::fmt;
use std::path::Path;

/// Stable exit-code contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// A check or accuracy gate failed, or training diverged.
    CheckFailed = 1,
    /// Bad arguments, configuration or input data.
    Input = 2,
    /// A model artifact is damaged.
    Corrupt = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            kind: ExitKind::Input,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Failure {
            kind: ExitKind::CheckFailed,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    pub(crate) fn write(path: &Path, e: impl fmt::Display) -> Self {
        Failure::input(format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<deepquality::Error> for Failure {
    fn from(e: deepquality::Error) -> Self {
        let kind = if e.is_corruption() {
            ExitKind::Corrupt
        } else {
            ExitKind::Input
        };
        Failure {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;
