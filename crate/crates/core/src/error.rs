use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
