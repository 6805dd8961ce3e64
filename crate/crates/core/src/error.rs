use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),
    #[error("singular transfer: |det Φ_rv| = {det:e} over {tof} s")]
    SingularTransfer { det: f64, tof: f64 },
    #[error("degenerate linearization at node {node}, drift {tau} s: reference position at the origin")]
    DegenerateLinearization { node: usize, tau: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("scenario field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { field: field.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. } | Error::Json(_) => 2,
            Error::Infeasible(_) => 3,
            Error::Numerical(_) | Error::SingularTransfer { .. } | Error::NotPsd(_) | Error::DegenerateLinearization { .. } => 5,
            Error::Domain(_) | Error::Dimension(_) => 2,
            Error::Io { .. } => 1,
        }
    }
}
