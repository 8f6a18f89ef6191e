//! Per-layer budget allocation.
//!
//! Layer weights are a temperature softmax over sparsity values (negative
//! attention variance), so denser layers receive more of the total budget.
//! Budgets are `floor(B * pi)` with the rounding residue handed out one token
//! at a time by largest fractional remainder, ties to the lower layer index.

use alloc::vec::Vec;

use crate::cache::CacheSession;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub pis: Vec<f64>,
    pub budgets: Vec<usize>,
    pub tau: f64,
    pub total: usize,
}

/// Temperature softmax with max subtraction.
pub fn layer_weights(sigmas: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadTemperature(tau));
    }
    if sigmas.is_empty() {
        return Ok(Vec::new());
    }
    let max = sigmas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sigmas.iter().map(|s| libm::exp((s - max) / tau)).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Splits `total` into integer shares proportional to `weights` (which need
/// not be normalized); the result always sums to `total`.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let z: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / z).collect();
    let mut shares: Vec<usize> = exact.iter().map(|x| libm::floor(*x) as usize).collect();
    let assigned: usize = shares.iter().sum();
    // float error can push the floor sum a hair over `total`
    if assigned > total {
        let mut excess = assigned - total;
        for i in (0..shares.len()).rev() {
            let take = excess.min(shares[i]);
            shares[i] -= take;
            excess -= take;
        }
        return shares;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - shares[a] as f64;
        let rb = exact[b] - shares[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total - assigned) {
        shares[i] += 1;
    }
    shares
}

/// `pi = softmax(sigma / tau)`, budgets by floor plus largest remainder.
pub fn allocate(sigmas: &[f64], tau: f64, total: usize) -> Result<AllocationResult> {
    if sigmas.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("layer sparsity values must be finite".into()));
    }
    let pis = layer_weights(sigmas, tau)?;
    let budgets = if pis.is_empty() {
        Vec::new()
    } else {
        apportion(&pis, total)
    };
    Ok(AllocationResult {
        pis,
        budgets,
        tau,
        total,
    })
}

/// Like [`allocate`], but no layer receives more than `capacity` tokens;
/// overflow is redistributed across the remaining layers in proportion to
/// their weights. The total is `min(total, layers * capacity)`.
pub fn allocate_capped(sigmas: &[f64], tau: f64, total: usize, capacity: Option<usize>) -> Result<AllocationResult> {
    let mut result = allocate(sigmas, tau, total)?;
    let Some(cap) = capacity else {
        return Ok(result);
    };
    loop {
        let mut surplus = 0;
        for b in result.budgets.iter_mut() {
            if *b > cap {
                surplus += *b - cap;
                *b = cap;
            }
        }
        let open: Vec<usize> = (0..result.budgets.len()).filter(|&i| result.budgets[i] < cap).collect();
        if surplus == 0 || open.is_empty() {
            break;
        }
        let weights: Vec<f64> = open.iter().map(|&i| result.pis[i]).collect();
        for (&i, extra) in open.iter().zip(apportion(&weights, surplus)) {
            result.budgets[i] += extra;
        }
    }
    result.total = result.budgets.iter().sum();
    Ok(result)
}

/// Refreshes session budgets from the sparsity measured at the step that
/// just finished. Unbounded sessions only record the weights.
pub fn reallocate_step(session: &mut CacheSession, sigmas: &[f64]) -> Result<()> {
    if sigmas.len() != session.num_layers() {
        return Err(Error::InvalidConfig("one sparsity value per layer is required".into()));
    }
    session.apply_sigmas(sigmas)
}
