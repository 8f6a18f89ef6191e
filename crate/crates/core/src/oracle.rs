//! Ground-truth references for the bounded engine: the unbounded baseline,
//! direct recomputation of token scores from logged attention, and
//! divergence between a bounded run and its baseline.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::cache::{is_protected, TokenId};
use crate::error::{Error, Result};
use crate::scoring::AttentionStats;
use crate::sim::config::StreamConfig;
use crate::sim::generator::{slot_kind, token_id};
use crate::sim::stream::{run_stream, unbounded, RunSummary};

/// Runs the stream with no budget and no eviction.
pub fn baseline_run(config: &StreamConfig) -> Result<RunSummary> {
    run_stream(&unbounded(config))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScore {
    pub cum_score: f64,
    pub exposure: u64,
    pub importance: f64,
}

/// Evaluates every token's cumulative score, exposure and importance
/// directly from one layer's per-step log. Full attention maps are summed
/// when present; otherwise the logged raw column sums are used.
pub fn brute_force_scores(log: &[AttentionStats]) -> Result<BTreeMap<TokenId, OracleScore>> {
    let Some(first) = log.first() else {
        return Err(Error::IncompleteLog("no steps logged".into()));
    };
    let mut sums: BTreeMap<TokenId, (f64, u64)> = BTreeMap::new();
    for (offset, entry) in log.iter().enumerate() {
        if entry.step != first.step + offset {
            return Err(Error::IncompleteLog(format!(
                "expected step {}, found step {}",
                first.step + offset,
                entry.step
            )));
        }
        if entry.layer_index != first.layer_index {
            return Err(Error::IncompleteLog("log mixes layers".into()));
        }
        let n = entry.key_ids.len();
        if n == 0 || entry.n_keys != n {
            return Err(Error::IncompleteLog(format!(
                "step {} has inconsistent key count",
                entry.step
            )));
        }
        let received: Vec<f64> = match &entry.full_maps {
            Some(maps) => {
                if maps.iter().any(|m| m.len() != entry.n_queries * n) {
                    return Err(Error::IncompleteLog(format!("step {} has a truncated map", entry.step)));
                }
                (0..n)
                    .map(|j| {
                        let mut total = 0.0;
                        for map in maps {
                            for q in 0..entry.n_queries {
                                total += map[q * n + j];
                            }
                        }
                        total
                    })
                    .collect()
            }
            None if entry.col_sums_raw.len() == n => entry.col_sums_raw.clone(),
            None => {
                return Err(Error::IncompleteLog(format!(
                    "step {} has neither maps nor sums",
                    entry.step
                )))
            }
        };
        for (id, r) in entry.key_ids.iter().zip(received) {
            let slot = sums.entry(*id).or_insert((0.0, 0));
            slot.0 += r / n as f64;
            slot.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(id, (c, e))| {
            (
                id,
                OracleScore {
                    cum_score: c,
                    exposure: e,
                    importance: c / e as f64,
                },
            )
        })
        .collect())
}

/// Per-layer attention log of a run, in step order.
pub fn layer_log(run: &RunSummary, layer: usize) -> Vec<AttentionStats> {
    run.steps.iter().map(|s| s.layers[layer].stats.clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub max_abs: Vec<f64>,
    pub rms: Vec<f64>,
    pub cosine: Vec<f64>,
    /// Mean over steps of the baseline's head-mean attention mass that lands
    /// on keys still resident in the bounded run, per layer.
    pub retained_mass: Vec<f64>,
}

impl DivergenceReport {
    pub fn overall_max_abs(&self) -> f64 {
        self.max_abs.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_rms(&self) -> f64 {
        mean(&self.rms)
    }

    pub fn mean_retained_mass(&self) -> f64 {
        mean(&self.retained_mass)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Compares a bounded run against the baseline of the same stream.
pub fn compare_runs(bounded: &RunSummary, baseline: &RunSummary) -> Result<DivergenceReport> {
    if !bounded.config.same_stream(&baseline.config) {
        return Err(Error::ConfigMismatch("runs describe different streams".into()));
    }
    if bounded.steps.len() != baseline.steps.len() || bounded.outputs.len() != baseline.outputs.len() {
        return Err(Error::ConfigMismatch("runs cover different numbers of frames".into()));
    }
    let mut report = DivergenceReport {
        max_abs: Vec::new(),
        rms: Vec::new(),
        cosine: Vec::new(),
        retained_mass: Vec::new(),
    };
    for (a, b) in bounded.outputs.iter().zip(&baseline.outputs) {
        let (mut max_abs, mut sq, mut dot, mut na, mut nb, mut count) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0usize);
        for (ra, rb) in a.iter().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                max_abs = max_abs.max(libm::fabs(d));
                sq += d * d;
                dot += x * y;
                na += x * x;
                nb += y * y;
                count += 1;
            }
        }
        report.max_abs.push(max_abs);
        report
            .rms
            .push(if count == 0 { 0.0 } else { libm::sqrt(sq / count as f64) });
        let cos = if na == 0.0 && nb == 0.0 {
            1.0
        } else if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(-1.0, 1.0)
        };
        report.cosine.push(cos);
    }
    let layers = bounded.config.layers;
    for layer in 0..layers {
        let mut fractions = Vec::with_capacity(bounded.steps.len());
        for (bs, base) in bounded.steps.iter().zip(&baseline.steps) {
            let resident: BTreeSet<TokenId> = bs.layers[layer].stats.key_ids.iter().copied().collect();
            let stats = &base.layers[layer].stats;
            let total: f64 = stats.col_sums_headmean.iter().sum();
            let kept: f64 = stats
                .key_ids
                .iter()
                .zip(&stats.col_sums_headmean)
                .filter(|(id, _)| resident.contains(id))
                .map(|(_, s)| s)
                .sum();
            fractions.push(if total > 0.0 {
                (kept / total).clamp(0.0, 1.0)
            } else {
                1.0
            });
        }
        report.retained_mass.push(mean(&fractions));
    }
    Ok(report)
}

/// Fraction of evictable landmark tokens resident at the end of the run,
/// per layer. Streams without landmarks report 1.
pub fn landmark_retention(run: &RunSummary) -> Vec<f64> {
    run.final_cache
        .iter()
        .map(|layer| {
            if run.landmarks.is_empty() {
                return 1.0;
            }
            let resident: BTreeSet<TokenId> = layer.iter().map(|t| t.id).collect();
            let kept = run.landmarks.iter().filter(|id| resident.contains(id)).count();
            kept as f64 / run.landmarks.len() as f64
        })
        .collect()
}

/// Every protected token the stream admits over `frames` frames.
pub fn protected_ids(config: &StreamConfig, frames: usize) -> Vec<TokenId> {
    (0..frames)
        .flat_map(|f| (0..config.tokens_per_frame).map(move |s| (f, s)))
        .filter(|&(f, s)| is_protected(f, slot_kind(config, s)))
        .map(|(f, s)| token_id(config, f, s))
        .collect()
}

/// Protected tokens missing from any layer at the end of the run.
pub fn missing_protected(run: &RunSummary) -> Vec<(usize, TokenId)> {
    let expected = protected_ids(&run.config, run.steps.len());
    let mut missing = Vec::new();
    for (layer, tokens) in run.final_cache.iter().enumerate() {
        let resident: BTreeSet<TokenId> = tokens.iter().map(|t| t.id).collect();
        missing.extend(
            expected
                .iter()
                .filter(|id| !resident.contains(id))
                .map(|id| (layer, *id)),
        );
    }
    missing
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(step: usize, ids: &[u64], maps: Vec<Vec<f64>>, n_queries: usize) -> AttentionStats {
        AttentionStats::from_maps(
            step,
            0,
            ids.iter().copied().map(TokenId).collect(),
            n_queries,
            maps,
            true,
        )
    }

    #[test]
    fn single_step_reduces_to_column_sums() {
        let log = [entry(1, &[0, 1], vec![vec![0.25, 0.75, 0.5, 0.5]], 2)];
        let s = brute_force_scores(&log).unwrap();
        assert_eq!(s[&TokenId(0)].cum_score, 0.75 / 2.0);
        assert_eq!(s[&TokenId(1)].cum_score, 1.25 / 2.0);
        assert_eq!(s[&TokenId(1)].exposure, 1);
    }

    #[test]
    fn evicted_tokens_stop_accruing() {
        let log = [
            entry(1, &[0, 1], vec![vec![0.5, 0.5]], 1),
            entry(2, &[0, 2], vec![vec![0.1, 0.9]], 1),
        ];
        let s = brute_force_scores(&log).unwrap();
        assert_eq!(s[&TokenId(1)].exposure, 1);
        assert_eq!(s[&TokenId(1)].cum_score, 0.25);
        assert_eq!(s[&TokenId(0)].exposure, 2);
        assert!((s[&TokenId(0)].cum_score - 0.3).abs() < 1e-15);
        assert!((s[&TokenId(0)].importance - 0.15).abs() < 1e-15);
    }

    #[test]
    fn gaps_are_rejected() {
        let log = [entry(1, &[0], vec![vec![1.0]], 1), entry(3, &[0], vec![vec![1.0]], 1)];
        assert!(matches!(brute_force_scores(&log), Err(Error::IncompleteLog(_))));
        assert!(matches!(brute_force_scores(&[]), Err(Error::IncompleteLog(_))));
    }

    #[test]
    fn protected_id_listing() {
        let c = StreamConfig {
            tokens_per_frame: 4,
            registers: 1,
            ..Default::default()
        };
        let ids: Vec<u64> = protected_ids(&c, 3).into_iter().map(|t| t.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5, 8, 9]);
    }
}
