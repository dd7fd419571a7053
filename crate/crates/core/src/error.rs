use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quaternion is too close to a 180 degree rotation for a Rodrigues vector.
    #[error("rotation too close to 180 degrees (scalar part {scalar:e})")]
    SingularRotation { scalar: f64 },

    /// A covariance that must be symmetric positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The innovation covariance of a Kalman update could not be inverted.
    #[error("singular innovation covariance")]
    SingularInnovation,

    /// Estimate and truth tracks do not line up.
    #[error("mismatched tracks: {0}")]
    MismatchedTracks(String),

    /// A window-level failure inside a sliding run.
    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_window(self, index: usize) -> Self {
        match self {
            e @ Error::Window { .. } => e,
            e => Error::Window {
                index,
                source: Box::new(e),
            },
        }
    }
}
