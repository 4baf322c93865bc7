use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Unreadable or malformed configuration, or a bad command line.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] beris_core::Error),

    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
}

impl HarnessError {
    /// 2 for configuration, 3 for validation, 4 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use beris_core::Error as E;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(E::Divergence { .. }) => 4,
            HarnessError::Core(
                E::Validation(_) | E::Domain(_) | E::DegenerateFlow(_) | E::GridMismatch(_),
            ) => 3,
            HarnessError::Core(_) | HarnessError::Output(_) => 1,
        }
    }

    pub fn status(&self) -> &'static str {
        match self.exit_code() {
            2 => "config_error",
            3 => "validation_error",
            4 => "divergence",
            _ => "error",
        }
    }
}
