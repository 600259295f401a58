use std::path::PathBuf;

use nalgebra::DVector;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Best iterate reached by coordinate descent before the sweep budget ran out.
#[derive(Debug, Clone)]
pub struct NotConverged {
    pub lambda: f64,
    pub coefficients: DVector<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(
        "dead time {dead_time} min of channel ({output},{input}) is not a multiple of the sample period {sample_period} min"
    )]
    NonCommensurate {
        output: usize,
        input: usize,
        dead_time: f64,
        sample_period: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "lasso did not converge at lambda = {lambda:e}: kkt residual {residual:e} after {sweeps} sweeps",
        lambda = .0.lambda, residual = .0.kkt_residual, sweeps = .0.sweeps
    )]
    NotConverged(Box<NotConverged>),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("window out of range: {0}")]
    WindowOutOfRange(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Wrap an error with a label naming the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error JSON and the C status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid_model",
            Error::NonCommensurate { .. } => "non_commensurate",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotConverged(_) => "not_converged",
            Error::Singular(_) => "singular",
            Error::WindowOutOfRange(_) => "window_out_of_range",
            Error::Config { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. } => "io",
        }
    }
}
