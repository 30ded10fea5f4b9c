use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{op}: {source}")]
    Run {
        op: &'static str,
        #[source]
        source: qgl_core::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run { source, .. } => match source {
                qgl_core::Error::InvalidParameter(_)
                | qgl_core::Error::IntervalMeetsDelta { .. }
                | qgl_core::Error::Precondition(_) => 2,
                _ => 1,
            },
            CliError::Failed(_) => 1,
        }
    }
}

/// Tags a core error with the operation that raised it.
pub trait Op<T> {
    fn op(self, op: &'static str) -> Result<T, CliError>;
}

impl<T> Op<T> for qgl_core::Result<T> {
    fn op(self, op: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Run { op, source })
    }
}
