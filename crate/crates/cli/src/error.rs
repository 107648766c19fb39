use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// A simulation produced a non-finite state; exit code 3.
    #[error("trajectory {trajectory} diverged at step {step}")]
    Diverged { trajectory: usize, step: usize },

    #[error(transparent)]
    Core(#[from] nystrom_fit::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}
