use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or layouts that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// An argument outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Missing or unusable data (empty shards, zero-sized datasets).
    #[error("data error: {0}")]
    Data(String),

    /// Federated protocol violations such as an empty aggregation.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}

/// Attaches a pipeline stage label to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
