use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("address {addr:#x} outside L1 (size {limit:#x})")]
    AddressOutOfRange { addr: u32, limit: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("simulation fault at cycle {cycle}: {msg}")]
    Fault { cycle: u64, msg: String },

    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
