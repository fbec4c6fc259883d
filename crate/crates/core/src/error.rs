use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Every Kraus branch weight underflowed; the outcome lies implausibly
    /// far from the support of the state.
    #[error("degenerate measurement outcome m = {outcome}: post-measurement norm² = {norm_sq:e}")]
    DegenerateOutcome { outcome: f64, norm_sq: f64 },

    #[error("co-moving frame undefined for |n| = {norm:e}")]
    FrameDegeneracy { norm: f64 },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// The stochastic integrator left the positive cone; retry with a smaller step.
    #[error("integrator step produced eigenvalue {min_eigenvalue:e} (dt = {dt:e})")]
    IntegratorStep { min_eigenvalue: f64, dt: f64 },

    #[error("degenerate correlation: {0} sequence has zero variance")]
    DegenerateCorrelation(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("engine mismatch: {0}")]
    EngineMismatch(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Process exit status: 2 for configuration errors, 3 for numerical
    /// degeneracies, 4 for engine or parameter mismatches, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::DegenerateOutcome { .. }
            | Error::FrameDegeneracy { .. }
            | Error::NumericalDegeneracy(_)
            | Error::IntegratorStep { .. }
            | Error::DegenerateCorrelation(_) => 3,
            Error::Parameter(_) | Error::LengthMismatch { .. } | Error::EngineMismatch(_) => 4,
            Error::Io(_) => 1,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
