//! Per-frame pipeline: evict, frame-wise attention, global attention over the
//! cache in every layer, scoring, reallocation, report.

use alloc::vec::Vec;

use crate::allocator::reallocate_step;
use crate::cache::{footprint_bytes, CacheConfig, CacheSession, TokenId, TokenRecord, TokenSnapshot};
use crate::error::{Error, Result};
use crate::policy::{maintain_step, EvictReason, EvictionPolicy};
use crate::scoring::{accumulate, layer_sparsity, AttentionStats};
use crate::sim::config::{BudgetSpec, StreamConfig};
use crate::sim::generator::{
    anchor_direction, evictable_landmarks, generate_frame_with_anchor, stream_rng, token_id, FrameTokens, WEIGHT_STREAM,
};
use crate::sim::kernels::{attention_multiplies, multi_head_attention, rms_norm, Matrix};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
struct Projections {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    o: Matrix,
}

impl Projections {
    fn random(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> Self {
        Self {
            q: Matrix::random(rng, dim),
            k: Matrix::random(rng, dim),
            v: Matrix::random(rng, dim),
            o: Matrix::random(rng, dim),
        }
    }
}

/// Fixed seeded weights: one frame-wise block and one block per global layer.
/// Query and key maps of global layers carry an extra rank-one component
/// along the anchor direction scaled by the layer's focus.
#[derive(Debug, Clone, PartialEq)]
struct ModelWeights {
    frame: Projections,
    layers: Vec<Projections>,
}

impl ModelWeights {
    fn new(config: &StreamConfig, anchor: &[f64]) -> Self {
        let mut rng = stream_rng(config.seed, WEIGHT_STREAM);
        let frame = Projections::random(&mut rng, config.dim);
        let layers = config
            .focus()
            .into_iter()
            .map(|focus| {
                let mut p = Projections::random(&mut rng, config.dim);
                p.q.add_rank_one(anchor, focus);
                p.k.add_rank_one(anchor, focus);
                p
            })
            .collect();
        Self { frame, layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvictedToken {
    pub id: TokenId,
    pub importance: f64,
}

/// What happened in one layer during one step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerReport {
    pub layer: usize,
    /// Nominal budget in force during this step (`None` when unbounded).
    pub budget_pre: Option<usize>,
    /// Budget after the protected floor.
    pub effective_budget: Option<usize>,
    /// Budget computed from this step's attention, used next step.
    pub budget_post: Option<usize>,
    pub occupancy_pre: usize,
    pub occupancy_post: usize,
    pub protected_count: usize,
    pub floor_clamped: bool,
    pub evicted: Vec<EvictedToken>,
    pub evict_reason: Option<EvictReason>,
    pub sigma: f64,
    pub pi: f64,
    pub multiplies: u64,
    pub stats: AttentionStats,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StepReport {
    /// 1-based step number (`frame_index + 1`).
    pub step: usize,
    pub frame_index: usize,
    pub layers: Vec<LayerReport>,
    /// Global-attention multiplies summed over layers.
    pub multiplies: u64,
    /// Key/value bytes resident after admission.
    pub footprint_bytes: usize,
}

impl StepReport {
    pub fn total_occupancy(&self) -> usize {
        self.layers.iter().map(|l| l.occupancy_post).sum()
    }

    pub fn evictions(&self) -> usize {
        self.layers.iter().map(|l| l.evicted.len()).sum()
    }
}

/// Output of a complete stream.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RunSummary {
    pub config: StreamConfig,
    pub total_budget: Option<usize>,
    pub steps: Vec<StepReport>,
    /// Final-layer embeddings per frame, `tokens_per_frame` rows of `dim`.
    pub outputs: Vec<Vec<Vec<f64>>>,
    /// Landmark tokens that eviction could remove.
    pub landmarks: Vec<TokenId>,
    /// Scoring state of every resident token after the last step, per layer.
    pub final_cache: Vec<Vec<TokenSnapshot>>,
}

impl RunSummary {
    pub fn peak_footprint_bytes(&self) -> usize {
        self.steps.iter().map(|s| s.footprint_bytes).max().unwrap_or(0)
    }

    pub fn total_evictions(&self) -> usize {
        self.steps.iter().map(StepReport::evictions).sum()
    }

    pub fn mean_multiplies(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.multiplies as f64).sum::<f64>() / self.steps.len() as f64
    }
}

/// One live stream: cache, weights and eviction policy.
#[derive(Debug, Clone)]
pub struct StreamSession {
    config: StreamConfig,
    anchor: Vec<f64>,
    weights: ModelWeights,
    cache: CacheSession,
    eviction: EvictionPolicy,
}

impl StreamSession {
    pub fn new(config: StreamConfig) -> Result<Self> {
        config.validate()?;
        let anchor = anchor_direction(&config);
        let weights = ModelWeights::new(&config, &anchor);
        let cache = CacheSession::new(CacheConfig {
            layers: config.layers,
            tokens_per_frame: config.tokens_per_frame,
            total_budget: config.total_budget(),
            tau: config.effective_tau(),
            layer_capacity: Some(config.layer_capacity()),
        })?;
        let eviction = config.policy.eviction(config.seed);
        Ok(Self {
            config,
            anchor,
            weights,
            cache,
            eviction,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn cache(&self) -> &CacheSession {
        &self.cache
    }

    pub fn generate(&self, frame_index: usize) -> FrameTokens {
        generate_frame_with_anchor(&self.config, frame_index, &self.anchor)
    }

    fn frame_attention(&self, tokens: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let w = &self.weights.frame;
        let normed: Vec<Vec<f64>> = tokens.iter().map(|t| rms_norm(t)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|x| w.q.apply(x)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|x| w.k.apply(x)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| w.v.apply(x)).collect();
        let keys: Vec<&[f64]> = k.iter().map(Vec::as_slice).collect();
        let values: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
        let out = multi_head_attention(&q, &keys, &values, self.config.heads);
        residual(tokens, &out.outputs, &w.o)
    }

    /// Processes the next frame. Frames must arrive in order.
    pub fn step(&mut self, frame: &FrameTokens) -> Result<(Vec<Vec<f64>>, StepReport)> {
        let cfg = &self.config;
        let m = cfg.tokens_per_frame;
        if frame.frame_index != self.cache.step_counter() || frame.embeddings.len() != m {
            return Err(Error::InvalidConfig(alloc::format!(
                "expected frame {} with {m} tokens, got frame {} with {}",
                self.cache.step_counter(),
                frame.frame_index,
                frame.embeddings.len()
            )));
        }
        let step = self.cache.current_step();

        let pre: Vec<(Option<usize>, Option<usize>, usize, bool)> = self
            .cache
            .layers()
            .iter()
            .map(|l| (l.budget(), l.effective_budget(m), l.len(), l.floor_clamped(m)))
            .collect();
        let plans = maintain_step(&mut self.cache, self.eviction)?;

        let ids: Vec<TokenId> = (0..m).map(|s| token_id(cfg, frame.frame_index, s)).collect();
        let mut hidden = self.frame_attention(&frame.embeddings);
        let mut all_stats = Vec::with_capacity(cfg.layers);
        let mut multiplies = Vec::with_capacity(cfg.layers);
        for (layer, w) in self.weights.layers.iter().enumerate() {
            let normed: Vec<Vec<f64>> = hidden.iter().map(|t| rms_norm(t)).collect();
            let queries: Vec<Vec<f64>> = normed.iter().map(|x| w.q.apply(x)).collect();
            let records = normed
                .iter()
                .zip(&ids)
                .zip(&frame.kinds)
                .map(|((x, id), kind)| TokenRecord::new(*id, w.k.apply(x), w.v.apply(x), frame.frame_index, *kind))
                .collect();
            self.cache.admit(layer, records)?;

            let resident = self.cache.layer(layer)?.records();
            let keys: Vec<&[f64]> = resident.iter().map(|r| r.key.as_slice()).collect();
            let values: Vec<&[f64]> = resident.iter().map(|r| r.value.as_slice()).collect();
            let key_ids: Vec<TokenId> = resident.iter().map(|r| r.id).collect();
            multiplies.push(attention_multiplies(m, keys.len(), cfg.dim));
            let out = multi_head_attention(&queries, &keys, &values, cfg.heads);
            all_stats.push(AttentionStats::from_maps(
                step,
                layer,
                key_ids,
                m,
                out.maps,
                cfg.record_full_maps,
            ));
            hidden = residual(&hidden, &out.outputs, &w.o);
        }

        for (layer, stats) in all_stats.iter().enumerate() {
            accumulate(self.cache.layer_mut(layer)?, stats)?;
        }
        let sigmas: Vec<f64> = all_stats.iter().map(layer_sparsity).collect();
        self.cache.finish_step();
        reallocate_step(&mut self.cache, &sigmas)?;

        let mut layers = Vec::with_capacity(cfg.layers);
        for (layer, stats) in all_stats.into_iter().enumerate() {
            let (budget_pre, effective_budget, occupancy_pre, floor_clamped) = pre[layer];
            let plan = plans.iter().find(|p| p.layer_index == layer);
            let evicted = plan.map_or_else(Vec::new, |p| {
                p.victim_ids
                    .iter()
                    .zip(&p.importances_at_eviction)
                    .map(|(id, imp)| EvictedToken {
                        id: *id,
                        importance: *imp,
                    })
                    .collect()
            });
            let cache = self.cache.layer(layer)?;
            layers.push(LayerReport {
                layer,
                budget_pre,
                effective_budget,
                budget_post: cache.budget(),
                occupancy_pre,
                occupancy_post: cache.len(),
                protected_count: cache.protected_count(),
                floor_clamped,
                evicted,
                evict_reason: plan.map(|p| p.reason),
                sigma: sigmas[layer],
                pi: self.cache.last_pis()[layer],
                multiplies: multiplies[layer],
                stats,
            });
        }
        let report = StepReport {
            step,
            frame_index: frame.frame_index,
            multiplies: multiplies.iter().sum(),
            footprint_bytes: footprint_bytes(self.cache.total_occupancy(), cfg.dim, cfg.scalar_bytes),
            layers,
        };
        Ok((hidden, report))
    }

    /// Scoring state of every resident token, per layer.
    pub fn snapshot(&self) -> Vec<Vec<TokenSnapshot>> {
        self.cache
            .layers()
            .iter()
            .map(|l| l.records().iter().map(TokenRecord::snapshot).collect())
            .collect()
    }
}

fn residual(hidden: &[Vec<f64>], update: &[Vec<f64>], out_proj: &Matrix) -> Vec<Vec<f64>> {
    hidden
        .iter()
        .zip(update)
        .map(|(h, u)| h.iter().zip(out_proj.apply(u)).map(|(a, b)| a + b).collect())
        .collect()
}

/// Runs the whole configured stream.
pub fn run_stream(config: &StreamConfig) -> Result<RunSummary> {
    let mut session = StreamSession::new(config.clone())?;
    let mut steps = Vec::with_capacity(config.frames);
    let mut outputs = Vec::with_capacity(config.frames);
    let mut landmarks = Vec::new();
    for f in 0..config.frames {
        let frame = session.generate(f);
        landmarks.extend(evictable_landmarks(config, &frame));
        let (out, report) = session.step(&frame)?;
        outputs.push(out);
        steps.push(report);
    }
    Ok(RunSummary {
        config: config.clone(),
        total_budget: config.total_budget(),
        steps,
        outputs,
        landmarks,
        final_cache: session.snapshot(),
    })
}

/// Same stream with eviction disabled and no budget.
pub fn unbounded(config: &StreamConfig) -> StreamConfig {
    StreamConfig {
        budget: BudgetSpec::Unbounded,
        policy: crate::policy::PolicyKind::None,
        ..config.clone()
    }
}
