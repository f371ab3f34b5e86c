use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("conditioning event has zero probability")]
    UndefinedConditional,

    #[error("cannot pick {k} clusters from {n} rows")]
    Capacity { k: usize, n: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("wiring error: missing insertion point `{0}`")]
    Wiring(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("dictionary hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
