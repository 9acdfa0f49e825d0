use thiserror::Error;

/// Coarse failure classes. The CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
    Config,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Input => "input",
            ErrorClass::Numerical => "numerical",
            ErrorClass::Config => "config",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or invalid tabular input. `row` is the 1-based line in the source file
    /// (the header is line 1).
    #[error("{message}{}", location(*row, column.as_deref()))]
    Data {
        message: String,
        row: Option<u64>,
        column: Option<String>,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("missing ticker {0}")]
    MissingTicker(String),

    #[error("unknown ticker {0}")]
    UnknownTicker(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot}, jitter {jitter:e})")]
    NotPositiveDefinite { pivot: usize, jitter: f64 },

    #[error("exhaustive solver limited to {limit} variables, problem has {n_vars}")]
    TooManyVariables { n_vars: usize, limit: usize },

    #[error("unknown solver backend {0:?}")]
    UnknownBackend(String),

    #[error("solver backend {0:?} is not bundled with this build")]
    BackendNotBundled(String),

    #[error("portfolio has no allocated weight")]
    EmptyPortfolio,

    #[error("universe reduction selected no asset after {rounds} rounds")]
    EmptyUniverse { rounds: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location(row: Option<u64>, column: Option<&str>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column {c}"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" in column {c}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn data(message: impl Into<String>) -> Self {
        Error::Data {
            message: message.into(),
            row: None,
            column: None,
        }
    }

    pub(crate) fn data_at(
        message: impl Into<String>,
        row: Option<u64>,
        column: Option<&str>,
    ) -> Self {
        Error::Data {
            message: message.into(),
            row,
            column: column.map(str::to_owned),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Data { .. }
            | Error::DimensionMismatch { .. }
            | Error::MissingTicker(_)
            | Error::UnknownTicker(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Input,
            Error::NotPositiveDefinite { .. }
            | Error::EmptyPortfolio
            | Error::EmptyUniverse { .. } => ErrorClass::Numerical,
            Error::InvalidParameter(_)
            | Error::TooManyVariables { .. }
            | Error::UnknownBackend(_)
            | Error::BackendNotBundled(_) => ErrorClass::Config,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_error_reports_location() {
        let e = Error::data_at("non-positive price", Some(2), Some("AAA"));
        assert_eq!(e.to_string(), "non-positive price at row 2, column AAA");
        assert_eq!(e.class(), ErrorClass::Input);
    }
}
