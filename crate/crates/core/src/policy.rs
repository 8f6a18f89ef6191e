//! Eviction strategies.
//!
//! Every strategy answers the same question: given one layer and the number
//! of slots that must be freed, which unprotected tokens go. Eviction runs
//! before a frame is admitted, using the budgets computed at the end of the
//! previous step.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{CacheSession, LayerCache, TokenId};
use crate::error::{Error, Result};
use crate::scoring::importance;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Temperature used by the uniform-budget ablation.
pub const UNIFORM_BUDGET_TAU: f64 = 100.0;

/// Policy names accepted on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum PolicyKind {
    /// Lowest importance first, variance-driven layer budgets.
    Attention,
    /// Seeded uniform sample of unprotected tokens.
    Random,
    /// Attention scoring with near-uniform layer budgets (tau = 100).
    UniformBudget,
    /// Never evicts.
    None,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Attention,
        PolicyKind::Random,
        PolicyKind::UniformBudget,
        PolicyKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Attention => "attention",
            PolicyKind::Random => "random",
            PolicyKind::UniformBudget => "uniform_budget",
            PolicyKind::None => "none",
        }
    }

    /// Allocation temperature this policy runs with.
    pub fn tau(self, configured: f64) -> f64 {
        match self {
            PolicyKind::UniformBudget => UNIFORM_BUDGET_TAU,
            _ => configured,
        }
    }

    pub fn eviction(self, seed: u64) -> EvictionPolicy {
        match self {
            PolicyKind::Attention | PolicyKind::UniformBudget => EvictionPolicy::Attention,
            PolicyKind::Random => EvictionPolicy::Random { seed },
            PolicyKind::None => EvictionPolicy::None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown policy `{s}`")))
    }
}

/// Victim selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvictionPolicy {
    Attention,
    Random { seed: u64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum EvictReason {
    /// Freeing room for the incoming frame.
    BudgetAdmit,
    /// The layer's budget dropped below its occupancy.
    BudgetShrink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvictionPlan {
    pub layer_index: usize,
    pub victim_ids: Vec<TokenId>,
    pub reason: EvictReason,
    pub importances_at_eviction: Vec<f64>,
}

/// Eviction order for the attention policy: lowest importance, then newer
/// frame, then higher id.
pub fn eviction_order(a: (f64, usize, TokenId), b: (f64, usize, TokenId)) -> core::cmp::Ordering {
    a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
}

/// Chooses `slots_needed` unprotected victims from `cache`. `step` keys the
/// random generator so replays are deterministic.
pub fn plan_evictions(
    policy: EvictionPolicy,
    cache: &LayerCache,
    slots_needed: usize,
    step: usize,
    reason: EvictReason,
) -> Result<EvictionPlan> {
    let layer = cache.layer_index();
    let mut plan = EvictionPlan {
        layer_index: layer,
        victim_ids: Vec::new(),
        reason,
        importances_at_eviction: Vec::new(),
    };
    if slots_needed == 0 {
        return Ok(plan);
    }
    let available = cache.unprotected_count();
    if available < slots_needed {
        return Err(Error::InsufficientUnprotected {
            layer,
            needed: slots_needed,
            available,
        });
    }
    let candidates = cache.records().iter().filter(|r| !r.protected);
    match policy {
        EvictionPolicy::None => {
            return Err(Error::EvictionDisabled {
                layer,
                needed: slots_needed,
            })
        }
        EvictionPolicy::Attention => {
            let mut scored: Vec<(f64, usize, TokenId)> =
                candidates.map(|r| (importance(r), r.frame_index, r.id)).collect();
            if slots_needed < scored.len() {
                scored.select_nth_unstable_by(slots_needed - 1, |a, b| eviction_order(*a, *b));
                scored.truncate(slots_needed);
            }
            scored.sort_by(|a, b| eviction_order(*a, *b));
            for (imp, _, id) in scored {
                plan.victim_ids.push(id);
                plan.importances_at_eviction.push(imp);
            }
        }
        EvictionPolicy::Random { seed } => {
            let pool: Vec<_> = candidates.collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((step as u64) << 20) ^ layer as u64);
            let mut picks = rand::seq::index::sample(&mut rng, pool.len(), slots_needed).into_vec();
            picks.sort_unstable();
            for i in picks {
                plan.victim_ids.push(pool[i].id);
                plan.importances_at_eviction.push(importance(pool[i]));
            }
        }
    }
    Ok(plan)
}

/// Evicts in every layer until the incoming frame fits under the effective
/// budget. Returns one plan per layer that evicted anything.
pub fn maintain_step(session: &mut CacheSession, policy: EvictionPolicy) -> Result<Vec<EvictionPlan>> {
    let m = session.config().tokens_per_frame;
    let step = session.current_step();
    let mut plans = Vec::new();
    for layer in 0..session.num_layers() {
        let cache = session.layer(layer)?;
        let Some(budget) = cache.effective_budget(m) else {
            continue;
        };
        let occupancy = cache.len();
        let needed = (occupancy + m).saturating_sub(budget);
        if needed == 0 {
            continue;
        }
        let reason = if occupancy > budget {
            EvictReason::BudgetShrink
        } else {
            EvictReason::BudgetAdmit
        };
        let plan = plan_evictions(policy, cache, needed, step, reason)?;
        session.remove(layer, &plan.victim_ids)?;
        plans.push(plan);
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{CacheConfig, TokenKind, TokenRecord};
    use alloc::vec;

    /// Layer with two protected frame-0 tokens and eight patches whose
    /// importances are set directly.
    fn layer_with(importances: &[f64]) -> CacheSession {
        let mut s = CacheSession::new(CacheConfig {
            layers: 1,
            tokens_per_frame: 2,
            total_budget: Some(9),
            tau: 1.5,
            layer_capacity: None,
        })
        .unwrap();
        let p = |id: u64, frame: usize| TokenRecord::new(TokenId(id), vec![0.0], vec![0.0], frame, TokenKind::Patch);
        s.layer_mut(0).unwrap().set_budget(None);
        s.admit(0, vec![p(0, 0), p(1, 0)]).unwrap();
        let patches = importances
            .iter()
            .enumerate()
            .map(|(i, _)| p(2 + i as u64, 1 + i / 2))
            .collect();
        s.admit(0, patches).unwrap();
        for (r, imp) in s.layer_mut(0).unwrap().records_mut()[2..].iter_mut().zip(importances) {
            r.cum_score = *imp;
        }
        s.layer_mut(0).unwrap().set_budget(Some(9));
        s
    }

    #[test]
    fn attention_evicts_lowest_importance() {
        let imps = [0.02, 0.30, 0.11, 0.07, 0.25, 0.19, 0.05, 0.40];
        let mut s = layer_with(&imps);
        assert_eq!(s.occupancy(0).unwrap(), 10);
        let plans = maintain_step(&mut s, EvictionPolicy::Attention).unwrap();
        assert_eq!(plans.len(), 1);
        let plan = &plans[0];
        assert_eq!(plan.reason, EvictReason::BudgetShrink);
        assert_eq!(plan.importances_at_eviction, vec![0.02, 0.05, 0.07]);
        assert_eq!(plan.victim_ids, vec![TokenId(2), TokenId(8), TokenId(5)]);
        assert_eq!(s.occupancy(0).unwrap(), 7);
    }

    #[test]
    fn ties_evict_newer_frames_first() {
        let s = layer_with(&[0.1; 8]);
        let plan = plan_evictions(
            EvictionPolicy::Attention,
            s.layer(0).unwrap(),
            3,
            3,
            EvictReason::BudgetAdmit,
        )
        .unwrap();
        assert_eq!(plan.victim_ids, vec![TokenId(9), TokenId(8), TokenId(7)]);
    }

    #[test]
    fn zero_slots_means_empty_plan() {
        let s = layer_with(&[0.1; 8]);
        for policy in [
            EvictionPolicy::Attention,
            EvictionPolicy::Random { seed: 1 },
            EvictionPolicy::None,
        ] {
            let plan = plan_evictions(policy, s.layer(0).unwrap(), 0, 1, EvictReason::BudgetAdmit).unwrap();
            assert!(plan.victim_ids.is_empty());
        }
    }

    #[test]
    fn none_policy_refuses_to_evict() {
        let s = layer_with(&[0.1; 8]);
        let err = plan_evictions(
            EvictionPolicy::None,
            s.layer(0).unwrap(),
            1,
            1,
            EvictReason::BudgetAdmit,
        );
        assert_eq!(err, Err(Error::EvictionDisabled { layer: 0, needed: 1 }));
    }

    #[test]
    fn insufficient_unprotected() {
        let s = layer_with(&[0.1; 8]);
        let err = plan_evictions(
            EvictionPolicy::Attention,
            s.layer(0).unwrap(),
            9,
            1,
            EvictReason::BudgetAdmit,
        );
        assert_eq!(
            err,
            Err(Error::InsufficientUnprotected {
                layer: 0,
                needed: 9,
                available: 8
            })
        );
    }

    #[test]
    fn random_is_seeded_and_skips_protected() {
        let s = layer_with(&[0.1; 8]);
        let cache = s.layer(0).unwrap();
        let a = plan_evictions(
            EvictionPolicy::Random { seed: 5 },
            cache,
            4,
            2,
            EvictReason::BudgetAdmit,
        )
        .unwrap();
        let b = plan_evictions(
            EvictionPolicy::Random { seed: 5 },
            cache,
            4,
            2,
            EvictReason::BudgetAdmit,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.victim_ids.len(), 4);
        assert!(a.victim_ids.iter().all(|id| id.0 >= 2));
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!(
            "uniform-budget".parse::<PolicyKind>().unwrap(),
            PolicyKind::UniformBudget
        );
        assert!("lru".parse::<PolicyKind>().is_err());
        assert_eq!(PolicyKind::UniformBudget.tau(1.5), 100.0);
        assert_eq!(PolicyKind::Random.tau(1.5), 1.5);
    }

    proptest::proptest! {
        #[test]
        fn partial_selection_matches_full_sort(
            imps in proptest::collection::vec(0u8..6, 2..40),
            k in 1usize..40,
        ) {
            let imps: Vec<f64> = imps.into_iter().map(|x| x as f64 * 0.01).collect();
            let k = k.min(imps.len());
            let s = layer_with(&imps);
            let cache = s.layer(0).unwrap();
            let plan = plan_evictions(EvictionPolicy::Attention, cache, k, 1, EvictReason::BudgetAdmit).unwrap();
            let mut all: Vec<(f64, usize, TokenId)> = cache
                .records()
                .iter()
                .filter(|r| !r.protected)
                .map(|r| (importance(r), r.frame_index, r.id))
                .collect();
            all.sort_by(|a, b| eviction_order(*a, *b));
            let expected: Vec<TokenId> = all[..k].iter().map(|t| t.2).collect();
            proptest::prop_assert_eq!(plan.victim_ids, expected);
        }
    }
}
