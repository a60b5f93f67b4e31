//! CLI error type with stable exit codes.
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | I/O failure                               |
//! | 2    | input parse error (also clap usage errors)|
//! | 3    | unidentifiable panel / singular system    |
//! | 4    | calibration did not converge              |
//! | 5    | domain or validation error                |

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Io(PathBuf, std::io::Error),
    Parse(String),
    Core(ttcpd_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(..) => 1,
            CliError::Parse(_) => 2,
            CliError::Core(e) => match e {
                ttcpd_core::Error::Singular(_) => 3,
                ttcpd_core::Error::NotConverged { .. } => 4,
                _ => 5,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
            CliError::Parse(msg) => write!(f, "parse error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ttcpd_core::Error> for CliError {
    fn from(e: ttcpd_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
