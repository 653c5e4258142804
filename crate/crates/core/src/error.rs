use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty cloud: no points left after bounds clipping")]
    EmptyCloud,
    #[error("empty input tensor")]
    EmptyInput,
    #[error("empty feature map")]
    EmptyFeatureMap,
    #[error("coordinate overflows the hash key budget: {0}")]
    CoordOverflow(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("insufficient database: need {needed} candidates, have {available}")]
    InsufficientDatabase { needed: usize, available: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
