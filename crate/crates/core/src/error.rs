use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("symbol not in alphabet: {0}")]
    NotInAlphabet(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// The trellis would exceed the configured state or memory budget.
    #[error("state budget exceeded: {0}")]
    StateBudget(String),
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    /// Conditioning information excludes every candidate symbol.
    #[error("inconsistent conditioning: {0}")]
    InconsistentContext(String),
    #[error("infeasible target: {0}")]
    Infeasible(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::StateBudget(_) | Error::Numerical(_) | Error::Io(_) => 3,
            _ => 2,
        }
    }
}
