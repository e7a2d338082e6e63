use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {time} is not a point of the mesh with step {dt}")]
    OffMesh { time: f64, dt: f64 },

    #[error("{field} = {value} is not an integer multiple of dt = {dt}")]
    NotMultiple { field: &'static str, value: f64, dt: f64 },

    #[error("time {time} falls outside the stored range [{start}, {end}]")]
    OutOfRange { time: f64, start: f64, end: f64 },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty sample set")]
    EmptySamples,

    #[error("non-finite state at step {step} (t = {time}), particle {particle}")]
    NonFinite { step: usize, time: f64, particle: usize },

    #[error("test path is non-zero at t = {time}, outside [0, T]")]
    SupportViolation { time: f64 },

    #[error("candidate control grid is empty")]
    EmptyCandidates,

    #[error("delayed state X(t - delta) = 0 at t = {time}; feedback control undefined")]
    ZeroDelayedState { time: f64 },

    #[error("fixed-point iteration diverged: control change grew for {iterations} consecutive iterations")]
    Divergence { iterations: usize },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
