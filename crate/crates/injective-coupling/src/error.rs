use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A measure or configuration failed validation.
    #[error("invalid input: {0}")]
    Validation(String),
    /// A mass coordinate or point fell outside the admissible range.
    #[error("out of domain: {0}")]
    Domain(String),
    /// The pair is not in convex order (or masses/means differ).
    #[error("convex order precondition failed: {0}")]
    ConvexOrder(String),
    /// A stage precondition of the construction does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// Something that cannot happen for valid inputs did happen.
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
