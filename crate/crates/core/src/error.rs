use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates its invariant. `field` is the dotted config path.
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("safety mode requires a reserve policy")]
    MissingPolicy,

    #[error("no trajectory realized a pre-exit epoch (nu >= 1); the pre-exit law is undefined for these parameters")]
    NoPreExitEpoch,

    #[error("oracle lattice has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: u64, cap: u64 },

    #[error("no grid point satisfies the feasibility constraint")]
    NoFeasiblePoint,

    #[error("cannot elect a leader from an empty node set")]
    EmptyNodeSet,

    #[error("topology has {actual} nodes but the game declares {expected}")]
    TopologyMismatch { expected: u32, actual: u64 },

    #[error("event log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
