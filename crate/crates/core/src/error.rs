use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported order {order}: only orders 1 and 2 are supported")]
    UnsupportedOrder { order: u32 },
    #[error("unsupported estimation: coupling does not provide `{missing}`")]
    UnsupportedEstimation { missing: &'static str },
    #[error("incomplete components: {0}")]
    IncompleteComponents(String),
    #[error("fit refused: {0}")]
    FitRefused(String),
    #[error("precision insufficient: certified error {certified:e} exceeds {target:e}; retry with at least {suggested_bits} bits")]
    PrecisionInsufficient {
        certified: f64,
        target: f64,
        suggested_bits: u32,
    },
    #[error("regime error: {0}")]
    Regime(String),
    #[error("size limit: {0}")]
    Size(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
