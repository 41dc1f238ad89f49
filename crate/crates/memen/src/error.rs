use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("graph builder is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("empty corpus after screening")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("example {id}: {msg}")]
    BadExample { id: String, msg: String },

    #[error("non-finite gradient in parameter {name}")]
    NanGradient { name: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
