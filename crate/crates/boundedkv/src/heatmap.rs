//! Head-averaged attention heatmaps: rows are steps, columns are every token
//! a layer ever held, cells are the head-mean column sum the token received
//! at that step (0 when it was not resident).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use boundedkv_core::TokenId;

use crate::error::{AppError, Result};
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub layer: usize,
    pub steps: Vec<usize>,
    pub token_ids: Vec<TokenId>,
    /// Row-major, `steps.len() x token_ids.len()`.
    pub values: Vec<f64>,
    /// Column indices where a new frame starts.
    pub frame_boundaries: Vec<usize>,
}

impl Heatmap {
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.token_ids.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn text_grid(&self) -> String {
        let mut out = String::new();
        for i in 0..self.steps.len() {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Binary portable graymap scaled so the largest cell is white.
    pub fn pgm(&self) -> Vec<u8> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.token_ids.len(), self.steps.len()).into_bytes();
        out.extend(
            self.values
                .iter()
                .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }),
        );
        out
    }

    pub fn sidecar(&self) -> String {
        let mut out = String::new();
        for b in &self.frame_boundaries {
            writeln!(out, "{b}").unwrap();
        }
        out
    }
}

/// Builds the grid for one layer. With `reweight`, row `t` is multiplied by
/// its step number `t` to offset the `1/N` shrinkage of later rows.
pub fn heatmap(trace: &Trace, layer: usize, reweight: bool) -> Result<Heatmap> {
    if layer >= trace.header.config.layers {
        return Err(AppError::UnknownLayer(layer));
    }
    let records: Vec<_> = trace.layer_records(layer).collect();
    let mut columns: BTreeMap<TokenId, usize> = BTreeMap::new();
    for r in &records {
        for id in &r.key_ids {
            columns.insert(*id, 0);
        }
    }
    for (i, col) in columns.values_mut().enumerate() {
        *col = i;
    }
    let width = columns.len();
    let mut values = vec![0.0; records.len() * width];
    for (row, r) in records.iter().enumerate() {
        let scale = if reweight { r.step as f64 } else { 1.0 };
        for (id, v) in r.key_ids.iter().zip(&r.col_sums_headmean) {
            values[row * width + columns[id]] = v * scale;
        }
    }
    let m = trace.header.config.tokens_per_frame as u64;
    let token_ids: Vec<TokenId> = columns.into_keys().collect();
    let frame_boundaries = token_ids
        .iter()
        .enumerate()
        .filter(|(i, id)| *i > 0 && id.0 / m != token_ids[i - 1].0 / m)
        .map(|(i, _)| i)
        .collect();
    Ok(Heatmap {
        layer,
        steps: records.iter().map(|r| r.step).collect(),
        token_ids,
        values,
        frame_boundaries,
    })
}

/// Writes `<stem>.txt`, `<stem>.pgm` and `<stem>.frames`. Returns the paths.
pub fn export_heatmap(trace: &Trace, layer: usize, reweight: bool, stem: &Path) -> Result<Vec<PathBuf>> {
    let map = heatmap(trace, layer, reweight)?;
    let files = [
        (stem.with_extension("txt"), map.text_grid().into_bytes()),
        (stem.with_extension("pgm"), map.pgm()),
        (stem.with_extension("frames"), map.sidecar().into_bytes()),
    ];
    let mut written = Vec::new();
    for (path, bytes) in files {
        fs::write(&path, bytes).map_err(|e| AppError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
