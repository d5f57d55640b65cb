use std::fmt;

/// Exit status for validation and usage problems.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit status for numerical failures, including non-convergence.
pub const EXIT_NUMERICAL: u8 = 3;

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }

    /// Wraps a library error, prefixing the offending file when known.
    pub fn from_lib(err: coxkl::Error, file: Option<&str>) -> Self {
        let message = match file {
            Some(f) => format!("{f}: {err}"),
            None => err.to_string(),
        };
        match err {
            coxkl::Error::Numerical(_) => Self::numerical(message),
            _ => Self::validation(message),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<coxkl::Error> for Failure {
    fn from(err: coxkl::Error) -> Self {
        Self::from_lib(err, None)
    }
}

pub type CliResult<T> = Result<T, Failure>;
