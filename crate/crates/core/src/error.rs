use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The thinning bound used for a step was exceeded by the rate evaluated at a candidate.
    #[error("rate bound violated at t={time}: particle {particle} has rate {rate} > bound {bound}")]
    RateBoundViolation {
        time: f64,
        particle: usize,
        rate: f64,
        bound: f64,
    },

    #[error("numerical blow-up at t={time} (particle {particle})")]
    NumericalBlowup {
        time: f64,
        particle: usize,
        snapshot: Vec<f64>,
    },

    #[error("model constraint violated: {0}")]
    Constraint(String),

    #[error("sample size {n} exceeds the assignment cap {cap}; subsample first")]
    OverCap { n: usize, cap: usize },

    /// The model did not pass its assumption probes and the run was not forced.
    #[error("model assumptions not confirmed (rerun with --force to proceed anyway):\n{report}")]
    Assumptions { indeterminate: bool, report: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
