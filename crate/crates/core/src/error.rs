use thiserror::Error;

/// Errors raised anywhere in the simulator, controllers, metrics or harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown ramp `{0}`")]
    UnknownRamp(String),

    #[error("ramp `{0}` is an off-ramp; an on-ramp is required")]
    NotAnOnRamp(String),

    #[error("distance from ramp `{0}` to itself is undefined")]
    SelfDistance(String),

    #[error("at least two on-ramps are required in scope, found {0}")]
    TooFewRamps(usize),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("controller contract breach: {0}")]
    Controller(String),

    #[error("message from `{sender}` is not from a neighbour of `{receiver}`")]
    NotANeighbour { sender: String, receiver: String },

    #[error("ramp `{receiver}` is missing the message from neighbour `{sender}`")]
    MissingMessage { sender: String, receiver: String },

    #[error("invalid metric input: {0}")]
    Metric(String),

    #[error("seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("grid of {runs} runs exceeds the budget of {budget}")]
    Budget { runs: usize, budget: usize },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
