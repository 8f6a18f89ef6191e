//! Token importance from per-step attention maps.
//!
//! Each step contributes `col_sums_raw[j] / n_keys` to the cumulative score of
//! key `j`, where the raw column sum adds the attention weight over every
//! head and query. Importance divides that by the number of steps the token
//! has been resident. Layer sparsity is the negative population variance of
//! the head-averaged column sums.

use alloc::vec::Vec;

use crate::cache::{LayerCache, TokenId, TokenRecord};
use crate::error::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Attention received by each resident key during one step of one layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AttentionStats {
    pub step: usize,
    pub layer_index: usize,
    pub n_keys: usize,
    pub n_queries: usize,
    pub heads: usize,
    /// Σ_h Σ_q a[h][q][j]
    pub col_sums_raw: Vec<f64>,
    /// Σ_q mean_h a[h][q][j]
    pub col_sums_headmean: Vec<f64>,
    pub key_ids: Vec<TokenId>,
    /// Optional full maps, one `n_queries x n_keys` row-major block per head.
    pub full_maps: Option<Vec<Vec<f64>>>,
}

impl AttentionStats {
    /// Builds column sums from per-head row-major weight maps.
    pub fn from_maps(
        step: usize,
        layer_index: usize,
        key_ids: Vec<TokenId>,
        n_queries: usize,
        maps: Vec<Vec<f64>>,
        keep_maps: bool,
    ) -> Self {
        let n_keys = key_ids.len();
        let heads = maps.len();
        let mut raw = alloc::vec![0.0; n_keys];
        let mut mean = alloc::vec![0.0; n_keys];
        for q in 0..n_queries {
            for j in 0..n_keys {
                let mut across_heads = 0.0;
                for map in &maps {
                    across_heads += map[q * n_keys + j];
                }
                raw[j] += across_heads;
                mean[j] += across_heads / heads as f64;
            }
        }
        Self {
            step,
            layer_index,
            n_keys,
            n_queries,
            heads,
            col_sums_raw: raw,
            col_sums_headmean: mean,
            key_ids,
            full_maps: keep_maps.then_some(maps),
        }
    }

    pub fn raw_total(&self) -> f64 {
        self.col_sums_raw.iter().sum()
    }

    pub fn headmean_total(&self) -> f64 {
        self.col_sums_headmean.iter().sum()
    }
}

/// Folds one step of attention into the layer's token scores and advances
/// exposure for every token resident before this step.
pub fn accumulate(cache: &mut LayerCache, stats: &AttentionStats) -> Result<()> {
    let layer = cache.layer_index();
    let consistent = stats.n_keys == stats.key_ids.len()
        && stats.n_keys == stats.col_sums_raw.len()
        && stats.n_keys == cache.len()
        && stats.n_keys > 0
        && cache.ids().zip(&stats.key_ids).all(|(a, b)| a == *b);
    if !consistent {
        return Err(Error::StaleStats { layer });
    }
    let inv_n = 1.0 / stats.n_keys as f64;
    for (record, raw) in cache.records_mut().iter_mut().zip(&stats.col_sums_raw) {
        record.cum_score += raw * inv_n;
        if record.birth_step < stats.step {
            record.exposure += 1;
        }
    }
    Ok(())
}

/// `cum_score / exposure`, or +∞ for protected tokens.
pub fn importance(token: &TokenRecord) -> f64 {
    if token.protected {
        f64::INFINITY
    } else {
        token.cum_score / token.exposure.max(1) as f64
    }
}

/// Negative population variance of the head-averaged column sums.
pub fn layer_sparsity(stats: &AttentionStats) -> f64 {
    -population_variance(&stats.col_sums_headmean)
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}
