use thiserror::Error;

/// Crate-wide error type. Variants distinguish caller mistakes (`Config`,
/// `Contract`) from runtime failures the caller may want to react to
/// (`Diverged`, `Precision`) and from bugs surfacing as inconsistent state
/// (`Internal`).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: unknown identifiers, out-of-range settings,
    /// incompatible dimensions chosen at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API contract was violated at call time, e.g. an action outside the
    /// environment's action space or distribution parameters off the simplex.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Internal consistency failure, e.g. a backward pass fed a tape recorded
    /// by a network of different topology.
    #[error("internal error: {0}")]
    Internal(String),

    /// Training produced non-finite quantities (gradients, targets,
    /// log-probabilities). Signalled instead of corrupting parameters.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// A numerical oracle could not reach its requested accuracy.
    #[error("precision not reached: {0}")]
    Precision(String),

    /// The requested computation is infeasible, e.g. exact enumeration over
    /// an action space that is not finitely enumerable.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
