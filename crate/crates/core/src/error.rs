use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// A configuration (budget split, workload, experiment file) is unusable.
    #[error("configuration error: {0}")]
    Config(String),
    /// A regression could not be fit (degenerate design).
    #[error("fit error: {0}")]
    Fit(String),
    /// A randomized generator gave up; retry with another seed.
    #[error("generation failed: {0}")]
    Generation(String),
    /// A data file was malformed.
    #[error("{path}:{line}: {msg}")]
    Ingest {
        path: String,
        line: usize,
        msg: String,
    },
    /// A report did not contain the requested metric.
    #[error("report error: {0}")]
    Report(String),
    /// An experiment stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps an error with the experiment stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
