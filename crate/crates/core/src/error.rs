use thiserror::Error;

pub type Result<T> = std::result::Result<T, ReclError>;

#[derive(Debug, Error)]
pub enum ReclError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0} required")]
    MissingInput(&'static str),

    #[error("no events: the rate model is not identifiable")]
    NoEvents,

    #[error("design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("{what} did not converge after {iterations} iterations (gradient norm {norm:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        norm: f64,
    },

    #[error("degenerate leave-one-out risk set for subject {subject} at time {time}")]
    DegenerateLeaveOneOut { subject: String, time: f64 },

    #[error("unknown subject {0}")]
    UnknownSubject(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ReclError>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReclError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ReclError::InvalidInput(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        ReclError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 3 for numerical non-convergence, 2 for everything
    /// attributable to the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReclError::NonConvergence { .. } => 3,
            ReclError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
