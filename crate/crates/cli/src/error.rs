use std::fmt;
use std::path::Path;

use wvm_core::WvmError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, refused or infeasible requests.
    Usage(String),
    /// Unreadable or malformed inputs, failed writes.
    Data(String),
    /// Non-finite values during optimization.
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<WvmError> for CliError {
    fn from(e: WvmError) -> Self {
        let msg = e.to_string();
        match e {
            WvmError::Domain(_) | WvmError::Infeasible(_) | WvmError::Refused(_) => {
                CliError::Usage(msg)
            }
            WvmError::NonFinite(_) => CliError::Numeric(msg),
            WvmError::Io { .. }
            | WvmError::Parse { .. }
            | WvmError::Degenerate(_)
            | WvmError::DimensionMismatch { .. } => CliError::Data(msg),
        }
    }
}
