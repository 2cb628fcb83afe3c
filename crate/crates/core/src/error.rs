use thiserror::Error;

/// Errors produced anywhere in the simulator, planners or harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("obstacle placement failed after {retries} retries (placed {placed} of {requested})")]
    Placement {
        placed: usize,
        requested: usize,
        retries: usize,
    },
    #[error("simulation fault at t={t:.4}s: {reason}")]
    SimulationFault { t: f64, reason: String },
    #[error("degenerate thrust: |F_des| = {norm:.4} N below {min:.4} N")]
    DegenerateThrust { norm: f64, min: f64 },
    #[error("desired yaw is singular with respect to the thrust direction")]
    SingularYaw,
    #[error("zero-length trajectory segment {index}")]
    ZeroLengthSegment { index: usize },
    #[error("singular trajectory system: {0}")]
    SingularSystem(String),
    #[error("no plan: {0}")]
    NoPlan(String),
    #[error("infeasible query: {0}")]
    Infeasible(String),
    #[error("no path between start and goal")]
    NoPath,
    #[error("online run stalled at t={t:.2}s")]
    Stall { t: f64 },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("trial {trial}: {source}")]
    Trial {
        trial: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn in_trial(self, trial: impl Into<String>) -> Self {
        Error::Trial {
            trial: trial.into(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
