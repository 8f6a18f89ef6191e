use alloc::string::String;

use crate::cache::TokenId;

/// Everything that can go wrong inside the cache engine and simulator.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("layer {layer}: admitting {incoming} tokens at occupancy {occupancy} exceeds effective budget {budget}")]
    AdmissionOverflow {
        layer: usize,
        occupancy: usize,
        incoming: usize,
        budget: usize,
    },
    #[error("layer {layer}: token {id} is protected and cannot be evicted")]
    ProtectedEviction { layer: usize, id: TokenId },
    #[error("layer {layer}: token {id} is not resident")]
    UnknownToken { layer: usize, id: TokenId },
    #[error("layer {layer}: token {id} was admitted out of order or twice")]
    DuplicateToken { layer: usize, id: TokenId },
    #[error("layer index {0} out of range")]
    UnknownLayer(usize),
    #[error("layer {layer}: attention statistics do not match cache contents")]
    StaleStats { layer: usize },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("layer {layer}: need {needed} evictions but only {available} unprotected tokens")]
    InsufficientUnprotected {
        layer: usize,
        needed: usize,
        available: usize,
    },
    #[error("layer {layer}: policy `none` cannot free {needed} slots")]
    EvictionDisabled { layer: usize, needed: usize },
    #[error("invalid stream configuration: {0}")]
    InvalidConfig(String),
    #[error("attention log is incomplete: {0}")]
    IncompleteLog(String),
    #[error("runs are not comparable: {0}")]
    ConfigMismatch(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
