use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of a function (bad tau, epsilon, zero actual, ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    /// Non-finite objective or gradient during optimization.
    #[error("training error at stage {stage} (epsilon = {epsilon:e}), iteration {iteration}: {message}")]
    Training {
        stage: usize,
        epsilon: f64,
        iteration: usize,
        message: String,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("search error: {0}")]
    Search(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status for the command-line tool: 1 usage, 2 data, 3 numeric/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 1,
            Error::Training { .. } | Error::Numeric(_) | Error::Search(_) => 3,
            Error::Shape(_)
            | Error::Data(_)
            | Error::Lookup(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
