//! One comma-separated row per run.

use std::fs;
use std::path::Path;

use boundedkv_core::oracle::{landmark_retention, DivergenceReport};
use boundedkv_core::{BudgetMode, BudgetSpec, RunSummary};
use serde::Serialize;

use crate::error::{AppError, Result};

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "policy",
    "budget",
    "mode",
    "seed",
    "frames",
    "total_budget",
    "peak_footprint_bytes",
    "mean_multiplies",
    "mean_divergence",
    "landmark_retention",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    /// `beta=<x>`, `<n> tokens` or `unbounded`.
    pub budget: String,
    pub mode: String,
    pub seed: u64,
    pub frames: usize,
    pub total_budget: Option<usize>,
    pub peak_footprint_bytes: usize,
    pub mean_multiplies: f64,
    /// Mean per-frame RMS output difference against the baseline.
    pub mean_divergence: Option<f64>,
    /// Mean over layers of the landmark share still resident at the end.
    pub landmark_retention: f64,
}

impl SummaryRow {
    pub fn new(run: &RunSummary, divergence: Option<&DivergenceReport>) -> Self {
        let cfg = &run.config;
        let (budget, mode) = match cfg.budget {
            BudgetSpec::Unbounded => ("unbounded".to_string(), "-".to_string()),
            BudgetSpec::Tokens(b) => (format!("{b} tokens"), "absolute".to_string()),
            BudgetSpec::Fraction { beta, mode } => (
                format!("beta={beta}"),
                match mode {
                    BudgetMode::FixedHorizon => mode.name().to_string(),
                    BudgetMode::SteadyState { reference_frames } => format!("{}:{reference_frames}", mode.name()),
                },
            ),
        };
        let retention = landmark_retention(run);
        Self {
            policy: cfg.policy.name().to_string(),
            budget,
            mode,
            seed: cfg.seed,
            frames: cfg.frames,
            total_budget: run.total_budget,
            peak_footprint_bytes: run.peak_footprint_bytes(),
            mean_multiplies: run.mean_multiplies(),
            mean_divergence: divergence.map(DivergenceReport::mean_rms),
            landmark_retention: retention.iter().sum::<f64>() / retention.len().max(1) as f64,
        }
    }
}

/// Renders the table. An empty slice gives just the header line.
pub fn summarize(rows: &[SummaryRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).expect("writing to memory cannot fail");
    for row in rows {
        w.serialize(row).expect("summary rows always serialize");
    }
    String::from_utf8(w.into_inner().expect("writing to memory cannot fail")).expect("csv output is utf-8")
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    fs::write(path, summarize(rows)).map_err(|e| AppError::io(path, e))
}
