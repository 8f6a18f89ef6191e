//! Files and command-line driver around [`boundedkv_core`]: line-delimited
//! traces, attention heatmaps, summary tables, settings files, experiment
//! drivers and the self-verification suite.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod heatmap;
pub mod settings;
pub mod summary;
pub mod trace;
pub mod verify;

pub use boundedkv_core;
pub use error::{AppError, Result};
pub use trace::{read_trace, write_trace, Trace, TraceRecord};
