//! Desk-scale causal streaming transformer used to drive the cache.

pub mod config;
pub mod generator;
pub mod kernels;
pub mod stream;

pub use config::{BudgetMode, BudgetSpec, StreamConfig};
pub use generator::{generate_frame, FrameTokens};
pub use stream::{run_stream, EvictedToken, LayerReport, RunSummary, StepReport, StreamSession};
