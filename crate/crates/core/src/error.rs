use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A loaded or constructed entity breaks one of its type invariants.
    #[error("{entity}: field `{field}` {reason}")]
    Invariant {
        entity: String,
        field: String,
        reason: String,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported scenario file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("coupling strength is undefined for {0} agent(s); at least 2 are required")]
    CouplingUndefined(usize),

    #[error("simulation invariant violated: {0}")]
    SimInvariant(String),

    #[error("cannot compare tables: {0}")]
    Unpaired(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invariant(
        entity: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Invariant {
            entity: entity.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}
