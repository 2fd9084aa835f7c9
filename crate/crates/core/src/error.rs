use thiserror::Error;

/// Errors produced by the slicesim library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("topology schema error: {0}")]
    Schema(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),

    #[error("duplicate link between `{0}` and `{1}`")]
    DuplicateLink(String, String),

    #[error("self-loop on node `{0}`")]
    SelfLoop(String),

    #[error("topology is disconnected: node `{0}` is unreachable")]
    Disconnected(String),

    #[error("capacity invariant violated on `{element}`: {detail}")]
    Capacity { element: String, detail: String },

    #[error("topology has no server nodes")]
    NoServers,

    #[error("invalid slice request {slice}: {reason}")]
    InvalidSlice { slice: u64, reason: String },

    #[error("solver resource limit exhausted after {nodes} nodes ({reason})")]
    ResourceLimit { nodes: u64, reason: String },

    #[error("stale snapshot: applying slice {slice} would exceed capacity of `{element}`")]
    StaleSnapshot { slice: u64, element: String },

    #[error("solution is not optimal and cannot be applied")]
    NotOptimal,

    #[error("unknown slice id {0}")]
    UnknownSlice(u64),

    #[error("slice {0} is already active")]
    DuplicateSlice(u64),

    #[error("slice {0} is protected and can never be deallocated")]
    Protected(u64),

    #[error("no non-target legitimate slice is active")]
    NoBackgroundSlice,

    #[error("warmup failed: target ACU {target:.4} unreachable, achieved {achieved:.4} ({reason})")]
    WarmupFailed {
        target: f64,
        achieved: f64,
        reason: String,
    },

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
