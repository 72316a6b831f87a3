use alloc::string::String;

/// Errors raised by the core tensor, partition, kernel, and model layers.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Shape or extent mismatch; the message names both offending shapes.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid configuration (bad plan, variant, or kernel hyperparameters).
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract (e.g. backward on a
    /// non-scalar loss).
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}
