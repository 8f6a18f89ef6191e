//! Line-delimited JSON traces.
//!
//! Line 1 is a header carrying the format version and run configuration.
//! Every following line is one object tagged by `kind`: a `layer` record per
//! (step, layer), an `output` record per frame, and a `final_cache` record
//! per layer. Reading a trace back rebuilds the [`RunSummary`] exactly.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use boundedkv_core::policy::EvictReason;
use boundedkv_core::sim::{EvictedToken, LayerReport};
use boundedkv_core::{AttentionStats, RunSummary, StepReport, StreamConfig, TokenId, TokenSnapshot};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub config: StreamConfig,
    pub total_budget: Option<usize>,
    pub landmarks: Vec<TokenId>,
}

/// One (step, layer) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub frame_index: usize,
    pub layer: usize,
    pub n_keys: usize,
    pub n_queries: usize,
    pub heads: usize,
    pub budget_pre: Option<usize>,
    pub effective_budget: Option<usize>,
    pub budget_post: Option<usize>,
    pub occupancy_pre: usize,
    pub occupancy_post: usize,
    pub protected_count: usize,
    pub floor_clamped: bool,
    pub evicted: Vec<EvictedToken>,
    pub evict_reason: Option<EvictReason>,
    pub key_ids: Vec<TokenId>,
    pub col_sums_raw: Vec<f64>,
    pub col_sums_headmean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_maps: Option<Vec<Vec<f64>>>,
    pub sigma: f64,
    pub pi: f64,
    pub multiplies: u64,
    /// Footprint of the whole step, repeated on each of its layers.
    pub footprint_bytes: usize,
}

impl TraceRecord {
    fn new(step: &StepReport, layer: &LayerReport) -> Self {
        let s = &layer.stats;
        Self {
            step: step.step,
            frame_index: step.frame_index,
            layer: layer.layer,
            n_keys: s.n_keys,
            n_queries: s.n_queries,
            heads: s.heads,
            budget_pre: layer.budget_pre,
            effective_budget: layer.effective_budget,
            budget_post: layer.budget_post,
            occupancy_pre: layer.occupancy_pre,
            occupancy_post: layer.occupancy_post,
            protected_count: layer.protected_count,
            floor_clamped: layer.floor_clamped,
            evicted: layer.evicted.clone(),
            evict_reason: layer.evict_reason,
            key_ids: s.key_ids.clone(),
            col_sums_raw: s.col_sums_raw.clone(),
            col_sums_headmean: s.col_sums_headmean.clone(),
            full_maps: s.full_maps.clone(),
            sigma: layer.sigma,
            pi: layer.pi,
            multiplies: layer.multiplies,
            footprint_bytes: step.footprint_bytes,
        }
    }

    fn layer_report(&self) -> LayerReport {
        LayerReport {
            layer: self.layer,
            budget_pre: self.budget_pre,
            effective_budget: self.effective_budget,
            budget_post: self.budget_post,
            occupancy_pre: self.occupancy_pre,
            occupancy_post: self.occupancy_post,
            protected_count: self.protected_count,
            floor_clamped: self.floor_clamped,
            evicted: self.evicted.clone(),
            evict_reason: self.evict_reason,
            sigma: self.sigma,
            pi: self.pi,
            multiplies: self.multiplies,
            stats: AttentionStats {
                step: self.step,
                layer_index: self.layer,
                n_keys: self.n_keys,
                n_queries: self.n_queries,
                heads: self.heads,
                col_sums_raw: self.col_sums_raw.clone(),
                col_sums_headmean: self.col_sums_headmean.clone(),
                key_ids: self.key_ids.clone(),
                full_maps: self.full_maps.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Layer(TraceRecord),
    Output { frame_index: usize, rows: Vec<Vec<f64>> },
    FinalCache { layer: usize, tokens: Vec<TokenSnapshot> },
}

/// A parsed trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub outputs: Vec<Vec<Vec<f64>>>,
    pub final_cache: Vec<Vec<TokenSnapshot>>,
}

impl Trace {
    pub fn from_run(run: &RunSummary) -> Self {
        Self {
            header: TraceHeader {
                version: TRACE_VERSION,
                config: run.config.clone(),
                total_budget: run.total_budget,
                landmarks: run.landmarks.clone(),
            },
            records: run
                .steps
                .iter()
                .flat_map(|s| s.layers.iter().map(move |l| TraceRecord::new(s, l)))
                .collect(),
            outputs: run.outputs.clone(),
            final_cache: run.final_cache.clone(),
        }
    }

    /// Rebuilds the run the trace was written from.
    pub fn to_run(&self) -> Result<RunSummary> {
        let layers = self.header.config.layers;
        let malformed = |message: String| AppError::MalformedTrace { line: 0, message };
        if layers == 0 || !self.records.len().is_multiple_of(layers) {
            return Err(malformed(format!(
                "{} layer records for {layers} layers",
                self.records.len()
            )));
        }
        let mut steps = Vec::with_capacity(self.records.len() / layers);
        for chunk in self.records.chunks(layers) {
            let first = &chunk[0];
            if chunk
                .iter()
                .enumerate()
                .any(|(i, r)| r.layer != i || r.step != first.step)
            {
                return Err(malformed(format!(
                    "step {} does not list its layers in order",
                    first.step
                )));
            }
            steps.push(StepReport {
                step: first.step,
                frame_index: first.frame_index,
                layers: chunk.iter().map(TraceRecord::layer_report).collect(),
                multiplies: chunk.iter().map(|r| r.multiplies).sum(),
                footprint_bytes: first.footprint_bytes,
            });
        }
        Ok(RunSummary {
            config: self.header.config.clone(),
            total_budget: self.header.total_budget,
            steps,
            outputs: self.outputs.clone(),
            landmarks: self.header.landmarks.clone(),
            final_cache: self.final_cache.clone(),
        })
    }

    pub fn layer_records(&self, layer: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.layer == layer)
    }

    /// Serializes to the line format.
    pub fn to_writer(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut line = |l: &Line| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")
        };
        line(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            line(&Line::Layer(r.clone()))?;
        }
        for (frame_index, rows) in self.outputs.iter().enumerate() {
            line(&Line::Output {
                frame_index,
                rows: rows.clone(),
            })?;
        }
        for (layer, tokens) in self.final_cache.iter().enumerate() {
            line(&Line::FinalCache {
                layer,
                tokens: tokens.clone(),
            })?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn from_reader(input: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut trace = Trace {
            header: TraceHeader {
                version: TRACE_VERSION,
                config: StreamConfig::default(),
                total_budget: None,
                landmarks: Vec::new(),
            },
            records: Vec::new(),
            outputs: Vec::new(),
            final_cache: Vec::new(),
        };
        for (i, text) in input.lines().enumerate() {
            let number = i + 1;
            let bad = |message: String| AppError::MalformedTrace { line: number, message };
            let text = text.map_err(|e| bad(e.to_string()))?;
            let parsed: Line = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            match (number, parsed) {
                (1, Line::Header(h)) => {
                    if h.version != TRACE_VERSION {
                        return Err(bad(format!("unsupported version {}", h.version)));
                    }
                    header = Some(h);
                }
                (1, _) => return Err(bad("first line must be the header".into())),
                (_, Line::Header(_)) => return Err(bad("repeated header".into())),
                (_, Line::Layer(r)) => trace.records.push(r),
                (_, Line::Output { frame_index, rows }) => {
                    if frame_index != trace.outputs.len() {
                        return Err(bad(format!("output for frame {frame_index} out of order")));
                    }
                    trace.outputs.push(rows);
                }
                (_, Line::FinalCache { layer, tokens }) => {
                    if layer != trace.final_cache.len() {
                        return Err(bad(format!("final cache for layer {layer} out of order")));
                    }
                    trace.final_cache.push(tokens);
                }
            }
        }
        trace.header = header.ok_or(AppError::MalformedTrace {
            line: 1,
            message: "empty trace".into(),
        })?;
        Ok(trace)
    }
}

pub fn write_trace(run: &RunSummary, path: &Path) -> Result<()> {
    let bytes = Trace::from_run(run).to_bytes();
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    Trace::from_reader(BufReader::new(file))
}
