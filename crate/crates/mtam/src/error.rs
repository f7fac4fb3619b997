use std::io;
use std::path::PathBuf;

/// Failures surfaced by the command-line driver, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("incompatible input: {0}")]
    Compatibility(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] mtam_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mtam_core::Error as E;
        match self {
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Compatibility(_) => 4,
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                E::Data(_) | E::Ordering { .. } | E::Index { .. } => 2,
                E::NonFinite(_)
                | E::Divergence { .. }
                | E::Domain { .. }
                | E::DegenerateRow { .. }
                | E::DegenerateMemory => 3,
                E::Dimension { .. } | E::Contract(_) => 1,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_categories() {
        assert_eq!(CliError::Data("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
        assert_eq!(CliError::Compatibility("x".into()).exit_code(), 4);
        let div = mtam_core::Error::Divergence {
            iteration: 3,
            lr: 0.1,
            grad_norm: f64::INFINITY,
        };
        assert_eq!(CliError::from(div).exit_code(), 3);
        assert_eq!(
            CliError::from(mtam_core::Error::Data("bad".into())).exit_code(),
            2
        );
    }
}
