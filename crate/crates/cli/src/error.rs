//! Command-line error type and exit-code mapping.

use thiserror::Error;

use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 1 configuration, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Data(_) | CliError::Ingest(_) => 2,
            CliError::Numerical(_) | CliError::CheckFailed(_) => 3,
        }
    }
}

impl From<memiss_core::Error> for CliError {
    fn from(e: memiss_core::Error) -> Self {
        use memiss_core::Error as E;
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            E::Validation(_) | E::DimensionMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(CliError::from(memiss_core::Error::NonFiniteDensity).exit_code(), 3);
        assert_eq!(CliError::from(memiss_core::Error::Validation(vec!["x".into()])).exit_code(), 2);
        assert_eq!(CliError::from(memiss_core::Error::InvalidArgument("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(IngestError::Empty).exit_code(), 2);
    }
}
