//! Bounded KV-cache engine for streaming causal attention.
//!
//! Each global-attention layer keeps its own token budget. Budgets come from
//! a temperature softmax over layer sparsity (the negative variance of
//! head-averaged attention column sums), and within a layer the tokens that
//! received the least length- and exposure-normalized attention are evicted
//! before each new frame is admitted. First-frame, camera and register tokens
//! are never evicted.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`cache`]: per-layer stores and the session that owns them
//! - [`scoring`]: importance accumulation and layer sparsity
//! - [`allocator`]: per-layer budget allocation
//! - [`policy`]: attention, random and disabled eviction
//! - [`sim`]: a deterministic streaming transformer and frame generator
//! - [`oracle`]: baseline runs, brute-force scores and run comparison

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod allocator;
pub mod cache;
pub mod error;
pub mod oracle;
pub mod policy;
pub mod scoring;
pub mod sim;

pub use cache::{CacheConfig, CacheSession, LayerCache, TokenId, TokenKind, TokenRecord, TokenSnapshot};
pub use error::{Error, Result};
pub use policy::{EvictionPlan, EvictionPolicy, PolicyKind};
pub use scoring::AttentionStats;
pub use sim::{BudgetMode, BudgetSpec, RunSummary, StepReport, StreamConfig};
