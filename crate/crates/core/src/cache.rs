//! Bounded per-layer key/value store.
//!
//! A [`CacheSession`] owns one [`LayerCache`] per global-attention layer.
//! Records are kept in admission order and token ids are strictly increasing
//! within a layer, so lookups are binary searches and a retired id can never
//! come back.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Stable identifier of one token. The same token carries the same id in
/// every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum TokenKind {
    Patch,
    Camera,
    Register,
}

/// Protected tokens are those of the first frame plus every camera and
/// register token.
pub fn is_protected(frame_index: usize, kind: TokenKind) -> bool {
    frame_index == 0 || kind != TokenKind::Patch
}

/// One cached key/value pair plus the bookkeeping the scorer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub id: TokenId,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub frame_index: usize,
    pub kind: TokenKind,
    pub birth_step: usize,
    /// Number of steps this token has been resident, birth step included.
    pub exposure: u64,
    /// Row-length-normalized cumulative attention.
    pub cum_score: f64,
    pub protected: bool,
}

impl TokenRecord {
    /// Builds a fresh record. `birth_step` is overwritten on admission.
    pub fn new(id: TokenId, key: Vec<f64>, value: Vec<f64>, frame_index: usize, kind: TokenKind) -> Self {
        Self {
            id,
            key,
            value,
            frame_index,
            kind,
            birth_step: 0,
            exposure: 0,
            cum_score: 0.0,
            protected: is_protected(frame_index, kind),
        }
    }

    pub fn snapshot(&self) -> TokenSnapshot {
        TokenSnapshot {
            id: self.id,
            frame_index: self.frame_index,
            kind: self.kind,
            birth_step: self.birth_step,
            exposure: self.exposure,
            cum_score: self.cum_score,
            protected: self.protected,
        }
    }
}

/// Scoring state of a token without its key/value payload.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TokenSnapshot {
    pub id: TokenId,
    pub frame_index: usize,
    pub kind: TokenKind,
    pub birth_step: usize,
    pub exposure: u64,
    pub cum_score: f64,
    pub protected: bool,
}

/// KV store of a single global-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    layer_index: usize,
    records: Vec<TokenRecord>,
    /// `None` means unbounded.
    budget: Option<usize>,
    protected_count: usize,
    last_admitted: Option<TokenId>,
}

impl LayerCache {
    pub fn new(layer_index: usize, budget: Option<usize>) -> Self {
        Self {
            layer_index,
            records: Vec::new(),
            budget,
            protected_count: 0,
            last_admitted: None,
        }
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub(crate) fn records_mut(&mut self) -> &mut [TokenRecord] {
        &mut self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    pub fn set_budget(&mut self, budget: Option<usize>) {
        self.budget = budget;
    }

    pub fn protected_count(&self) -> usize {
        self.protected_count
    }

    pub fn unprotected_count(&self) -> usize {
        self.records.len() - self.protected_count
    }

    /// Budget after the protected floor: a layer always has room for its
    /// protected residents plus one incoming frame.
    pub fn effective_budget(&self, tokens_per_frame: usize) -> Option<usize> {
        self.budget.map(|b| b.max(self.protected_count + tokens_per_frame))
    }

    /// True when the protected floor overrides the nominal budget.
    pub fn floor_clamped(&self, tokens_per_frame: usize) -> bool {
        matches!(self.budget, Some(b) if b < self.protected_count + tokens_per_frame)
    }

    pub fn position(&self, id: TokenId) -> Option<usize> {
        self.records.binary_search_by_key(&id, |r| r.id).ok()
    }

    pub fn get(&self, id: TokenId) -> Option<&TokenRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.position(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.records.iter().map(|r| r.id)
    }

    fn push(&mut self, mut record: TokenRecord, step: usize) -> Result<()> {
        if self.last_admitted.is_some_and(|last| record.id <= last) {
            return Err(Error::DuplicateToken {
                layer: self.layer_index,
                id: record.id,
            });
        }
        record.birth_step = step;
        record.exposure = 1;
        record.cum_score = 0.0;
        record.protected = is_protected(record.frame_index, record.kind);
        if record.protected {
            self.protected_count += 1;
        }
        self.last_admitted = Some(record.id);
        self.records.push(record);
        Ok(())
    }

    fn remove(&mut self, ids: &[TokenId]) -> Result<usize> {
        let victims: BTreeSet<TokenId> = ids.iter().copied().collect();
        for &id in &victims {
            match self.get(id) {
                None => {
                    return Err(Error::UnknownToken {
                        layer: self.layer_index,
                        id,
                    })
                }
                Some(r) if r.protected => {
                    return Err(Error::ProtectedEviction {
                        layer: self.layer_index,
                        id,
                    })
                }
                Some(_) => {}
            }
        }
        self.records.retain(|r| !victims.contains(&r.id));
        Ok(victims.len())
    }
}

/// Static parameters of a cache session.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    pub layers: usize,
    pub tokens_per_frame: usize,
    /// Total budget `B` in tokens; `None` runs the unbounded baseline.
    pub total_budget: Option<usize>,
    /// Softmax temperature for layer allocation.
    pub tau: f64,
    /// Largest occupancy a layer can ever reach (`T_total * M`) when the
    /// stream length is known. Allocation never hands a layer more.
    pub layer_capacity: Option<usize>,
}

/// All layer caches of one stream plus the allocation state.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSession {
    config: CacheConfig,
    layers: Vec<LayerCache>,
    step_counter: usize,
    last_sigmas: Vec<f64>,
    last_pis: Vec<f64>,
}

impl CacheSession {
    /// Creates the session with the step-1 uniform allocation already applied.
    pub fn new(config: CacheConfig) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::InvalidConfig("at least one layer is required".into()));
        }
        if config.tokens_per_frame == 0 {
            return Err(Error::InvalidConfig("tokens per frame must be positive".into()));
        }
        if !(config.tau > 0.0 && config.tau.is_finite()) {
            return Err(Error::BadTemperature(config.tau));
        }
        let layers = (0..config.layers).map(|l| LayerCache::new(l, None)).collect();
        let mut session = Self {
            layers,
            step_counter: 0,
            last_sigmas: alloc::vec![0.0; config.layers],
            last_pis: alloc::vec![1.0 / config.layers as f64; config.layers],
            config,
        };
        session.apply_sigmas(&alloc::vec![0.0; session.config.layers])?;
        Ok(session)
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn is_bounded(&self) -> bool {
        self.config.total_budget.is_some()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerCache] {
        &self.layers
    }

    pub fn layer(&self, layer: usize) -> Result<&LayerCache> {
        self.layers.get(layer).ok_or(Error::UnknownLayer(layer))
    }

    pub(crate) fn layer_mut(&mut self, layer: usize) -> Result<&mut LayerCache> {
        self.layers.get_mut(layer).ok_or(Error::UnknownLayer(layer))
    }

    /// Number of fully processed frames.
    pub fn step_counter(&self) -> usize {
        self.step_counter
    }

    /// The 1-based step that the next (or in-progress) frame belongs to.
    pub fn current_step(&self) -> usize {
        self.step_counter + 1
    }

    pub(crate) fn finish_step(&mut self) {
        self.step_counter += 1;
    }

    pub fn last_sigmas(&self) -> &[f64] {
        &self.last_sigmas
    }

    pub fn last_pis(&self) -> &[f64] {
        &self.last_pis
    }

    pub fn budgets(&self) -> Vec<Option<usize>> {
        self.layers.iter().map(LayerCache::budget).collect()
    }

    /// Replaces per-layer sparsity values and recomputes budgets from them.
    pub(crate) fn apply_sigmas(&mut self, sigmas: &[f64]) -> Result<()> {
        let alloc = crate::allocator::allocate_capped(
            sigmas,
            self.config.tau,
            self.config.total_budget.unwrap_or(0),
            self.config.layer_capacity,
        )?;
        self.last_sigmas = sigmas.to_vec();
        self.last_pis = alloc.pis;
        if self.config.total_budget.is_some() {
            for (layer, b) in self.layers.iter_mut().zip(alloc.budgets) {
                layer.set_budget(Some(b));
            }
        }
        Ok(())
    }

    /// Appends `records` to a layer in order.
    pub fn admit(&mut self, layer: usize, records: Vec<TokenRecord>) -> Result<()> {
        let step = self.current_step();
        let m = self.config.tokens_per_frame;
        let cache = self.layer_mut(layer)?;
        if let Some(budget) = cache.effective_budget(m) {
            if cache.len() + records.len() > budget {
                return Err(Error::AdmissionOverflow {
                    layer,
                    occupancy: cache.len(),
                    incoming: records.len(),
                    budget,
                });
            }
        }
        for record in records {
            cache.push(record, step)?;
        }
        Ok(())
    }

    /// Removes unprotected tokens, keeping survivors in admission order.
    /// Nothing is removed if any id is unknown or protected.
    pub fn remove(&mut self, layer: usize, ids: &[TokenId]) -> Result<usize> {
        self.layer_mut(layer)?.remove(ids)
    }

    pub fn occupancy(&self, layer: usize) -> Result<usize> {
        self.layer(layer).map(LayerCache::len)
    }

    pub fn total_occupancy(&self) -> usize {
        self.layers.iter().map(LayerCache::len).sum()
    }

    /// Bytes held by keys and values across all layers.
    pub fn footprint_bytes(&self, dim: usize, scalar_bytes: usize) -> usize {
        footprint_bytes(self.total_occupancy(), dim, scalar_bytes)
    }
}

/// Key plus value storage for `tokens` resident tokens of width `dim`.
pub fn footprint_bytes(tokens: usize, dim: usize, scalar_bytes: usize) -> usize {
    tokens * 2 * dim * scalar_bytes
}
