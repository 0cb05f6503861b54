use symvec_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("diagnostic checks failed: {}", .0.join(", "))]
    DiagnoseFailed(Vec<String>),
}

impl CliError {
    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// 0 success, 1 failed diagnostics, 2 configuration or input errors,
    /// 3 numerical blow-up, 4 checkpoint version mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::DiagnoseFailed(_) => 1,
            CliError::Core(CoreError::NonFiniteGradient(_) | CoreError::ChainDiverged { .. }) => 3,
            CliError::Core(CoreError::VersionMismatch { .. }) => 4,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::DiagnoseFailed(vec!["x".into()]).exit_code(), 1);
        assert_eq!(CliError::Config("bad".into()).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::NonFiniteGradient("prior".into())).exit_code(), 3);
        assert_eq!(CliError::Core(CoreError::VersionMismatch { found: 9, expected: 1 }).exit_code(), 4);
        assert_eq!(CliError::Core(CoreError::InvalidBatch).exit_code(), 2);
    }
}
