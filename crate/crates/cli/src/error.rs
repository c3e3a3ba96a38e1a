use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] regq_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{failed} diagnostic check(s) failed")]
    DiagnosticsFailed { failed: usize },

    #[error("every seed diverged in {cells}")]
    AllDiverged { cells: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::DiagnosticsFailed { .. } => 3,
            CliError::AllDiverged { .. } => 4,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::DiagnosticsFailed { failed: 1 }.exit_code(), 3);
        assert_eq!(
            CliError::AllDiverged {
                cells: "c=1".into()
            }
            .exit_code(),
            4
        );
        assert_eq!(
            CliError::Core(regq_core::Error::Divergence { t: 3 }).exit_code(),
            1
        );
    }
}
