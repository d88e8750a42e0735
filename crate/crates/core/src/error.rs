use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("split: {0}")]
    Split(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {msg}")]
    Training {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("undefined Sharpe ratio: PnL has zero variance")]
    UndefinedSharpe,

    #[error("{context}: {source}")]
    Tensor {
        context: String,
        #[source]
        source: gradcore::Error,
    },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<gradcore::Error> for Error {
    fn from(source: gradcore::Error) -> Self {
        Error::Tensor {
            context: "tensor".into(),
            source,
        }
    }
}

/// Attach layer or file context to tensor errors.
pub(crate) trait Context<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, gradcore::Error> {
    fn context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Tensor {
            context: ctx(),
            source,
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
