use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BookError {
    #[error("limit order {order_id} at {price} would cross the opposite side")]
    CrossedBook { order_id: u64, price: f64 },
    #[error("market order for {requested} units found only {available} resting")]
    BookExhausted { requested: u64, available: u64 },
    #[error("order {0} is not a {1} order")]
    WrongKind(u64, &'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Book(#[from] BookError),
    #[error("cascade did not reach a fixpoint within {0} waves")]
    NonTermination(usize),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl EngineError {
    pub fn is_book_exhausted(&self) -> bool {
        matches!(self, EngineError::Book(BookError::BookExhausted { .. }))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("needs {needed} entries on the ladder but only {available} are activated")]
    InsufficientDepth { needed: usize, available: usize },
    #[error("malformed activation realization: {0}")]
    InvalidRealization(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl SimError {
    pub fn is_book_exhausted(&self) -> bool {
        matches!(self, SimError::Engine(e) if e.is_book_exhausted())
    }
}
