use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quasi-metric inequality fails even at zeta = {zeta_max} (triplet {u},{w},{v})")]
    NoFeasibleZeta {
        zeta_max: f64,
        u: usize,
        v: usize,
        w: usize,
    },

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("epsilon {epsilon} gives mu = {mu} >= 1 in the lower-bound construction")]
    InvalidEpsilon { epsilon: f64, mu: f64 },

    #[error("graph is disconnected: node {0} unreachable from node 0")]
    DisconnectedGraph(usize),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("adversary policy is scripted but round {round} slot {slot} has no script entry")]
    MissingScript { round: u64, slot: u8 },

    #[error("unknown kind `{0}`")]
    UnknownKind(String),

    #[error("node {0} did not transmit this slot")]
    NotATransmitter(usize),

    #[error("{0} only runs on static networks")]
    StaticOnly(&'static str),

    #[error("metric is not symmetric: d({u},{v}) = {forward} vs d({v},{u}) = {backward}")]
    NotSymmetric {
        u: usize,
        v: usize,
        forward: f64,
        backward: f64,
    },

    #[error("drift budget infeasible: {rejected} of {proposed} proposals rejected")]
    BudgetInfeasible { rejected: usize, proposed: usize },

    #[error("invalid configuration at `{locator}`: {reason}")]
    ConfigInvalid { locator: String, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("trace integrity failure: {0}")]
    IntegrityFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(locator: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            locator: locator.into(),
            reason: reason.into(),
        }
    }
}
