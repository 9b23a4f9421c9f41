use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),

    #[error("link of {distance} m exceeds communication range {d_max} m")]
    OutOfRange { distance: f64, d_max: f64 },

    #[error("dataset has {available} samples, need at least {required} (nodes x classes)")]
    InsufficientSamples { available: usize, required: usize },

    #[error("{what}: {reason}")]
    Format { what: String, reason: String },

    #[error("layout mismatch: expected {expected} parameters, got {actual}")]
    LayoutMismatch { expected: usize, actual: usize },

    #[error("feature dimension mismatch: model expects {expected}, data has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot evaluate on an empty sample set")]
    EmptyData,

    #[error("non-finite value during local training at epoch {epoch} (learning rate {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },

    #[error("ordering violated: |w* - w1| = {d1} exceeds |w* - w2| = {d2}")]
    Ordering { d1: f64, d2: f64 },

    #[error("round {round}, node {node}: {source}")]
    InRound {
        round: usize,
        node: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_round(self, round: usize, node: usize) -> Self {
        Error::InRound {
            round,
            node,
            source: alloc::boxed::Box::new(self),
        }
    }
}
