use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or missing, stale or malformed stage inputs.
    #[error("{0}")]
    Contract(String),

    #[error(transparent)]
    Core(#[from] pnlss::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Contract(_) => 2,
            CliError::Core(e) => match e {
                pnlss::Error::Invalid { .. }
                | pnlss::Error::Dimension { .. }
                | pnlss::Error::Parse { .. }
                | pnlss::Error::Csv(_)
                | pnlss::Error::Json(_) => 2,
                _ => 1,
            },
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}
