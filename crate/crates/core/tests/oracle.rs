use std::collections::BTreeMap;

use boundedkv_core::allocator::reallocate_step;
use boundedkv_core::oracle::{baseline_run, brute_force_scores, compare_runs, landmark_retention, layer_log};
use boundedkv_core::sim::run_stream;
use boundedkv_core::{
    BudgetMode, BudgetSpec, CacheConfig, CacheSession, PolicyKind, RunSummary, StreamConfig, TokenId, TokenKind,
};

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1e-300)
}

/// Checks resident scores and eviction-time importances against the oracle.
fn check_against_oracle(run: &RunSummary) -> usize {
    let mut checked = 0;
    for layer in 0..run.config.layers {
        let oracle = brute_force_scores(&layer_log(run, layer)).unwrap();
        for tok in &run.final_cache[layer] {
            let o = oracle[&tok.id];
            assert_eq!(tok.exposure, o.exposure, "layer {layer} {}", tok.id);
            assert!(rel_close(tok.cum_score, o.cum_score), "layer {layer} {}", tok.id);
            checked += 1;
        }
        for step in &run.steps {
            for ev in &step.layers[layer].evicted {
                assert!(
                    rel_close(ev.importance, oracle[&ev.id].importance),
                    "layer {layer} {}",
                    ev.id
                );
                checked += 1;
            }
        }
    }
    checked
}

#[test]
fn incremental_scores_match_brute_force() {
    for seed in 0..4 {
        let cfg = StreamConfig {
            frames: 12,
            seed,
            record_full_maps: true,
            budget: BudgetSpec::Fraction {
                beta: 0.2,
                mode: BudgetMode::FixedHorizon,
            },
            ..Default::default()
        };
        let run = run_stream(&cfg).unwrap();
        assert!(run.total_evictions() > 0);
        assert!(check_against_oracle(&run) > 0);
    }
}

#[test]
fn column_sum_logs_are_enough_for_the_oracle() {
    let cfg = StreamConfig {
        frames: 12,
        budget: BudgetSpec::Fraction {
            beta: 0.2,
            mode: BudgetMode::FixedHorizon,
        },
        ..Default::default()
    };
    let with_maps = run_stream(&StreamConfig {
        record_full_maps: true,
        ..cfg.clone()
    })
    .unwrap();
    let without = run_stream(&cfg).unwrap();
    check_against_oracle(&without);
    for layer in 0..cfg.layers {
        let a = brute_force_scores(&layer_log(&with_maps, layer)).unwrap();
        let b = brute_force_scores(&layer_log(&without, layer)).unwrap();
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (id, s) in &a {
            assert!(rel_close(b[id].cum_score, s.cum_score));
        }
    }
}

#[test]
fn comparison_rejects_other_streams() {
    let a = run_stream(&StreamConfig {
        frames: 3,
        ..Default::default()
    })
    .unwrap();
    let b = run_stream(&StreamConfig {
        frames: 3,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    assert!(compare_runs(&a, &b).is_err());
    let d = compare_runs(&a, &a).unwrap();
    assert!(d.max_abs.iter().chain(&d.rms).all(|&x| x == 0.0));
}

#[test]
fn comparison_is_symmetric() {
    let cfg = StreamConfig {
        frames: 10,
        ..Default::default()
    };
    let a = run_stream(&cfg).unwrap();
    let b = run_stream(&StreamConfig {
        policy: PolicyKind::Random,
        ..cfg
    })
    .unwrap();
    let (ab, ba) = (compare_runs(&a, &b).unwrap(), compare_runs(&b, &a).unwrap());
    assert_eq!(ab.max_abs, ba.max_abs);
    assert_eq!(ab.rms, ba.rms);
    assert_eq!(ab.cosine, ba.cosine);
}

/// Percentile rank (0 = lowest) of each landmark among evictable patches,
/// by exposure-normalized attention in the baseline.
fn landmark_ranks(gain: f64) -> Vec<Vec<f64>> {
    let cfg = StreamConfig {
        tokens_per_frame: 32,
        frames: 16,
        landmark_fraction: 0.1,
        landmark_gain: gain,
        ..Default::default()
    };
    let base = baseline_run(&cfg).unwrap();
    let landmarks: Vec<TokenId> = base.landmarks.clone();
    (0..cfg.layers)
        .map(|layer| {
            let scores: BTreeMap<TokenId, f64> = base.final_cache[layer]
                .iter()
                .filter(|t| t.kind == TokenKind::Patch && t.frame_index > 0)
                .map(|t| (t.id, t.cum_score / t.exposure as f64))
                .collect();
            let mut sorted: Vec<f64> = scores.values().copied().collect();
            sorted.sort_by(f64::total_cmp);
            landmarks
                .iter()
                .map(|id| sorted.partition_point(|&s| s < scores[id]) as f64 / sorted.len() as f64)
                .collect()
        })
        .collect()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Selective middle layers put landmarks in the top decile; the dense outer
/// layers still rank them well above the median.
#[test]
fn strong_landmarks_reach_the_top_decile() {
    let ranks = landmark_ranks(4.0);
    for layer in [1, 2] {
        assert!(median(&ranks[layer]) >= 0.9, "layer {layer}: {}", median(&ranks[layer]));
    }
    for layer in [0, 3] {
        assert!(median(&ranks[layer]) >= 0.6, "layer {layer}: {}", median(&ranks[layer]));
    }
}

#[test]
fn silent_landmarks_look_like_any_patch() {
    for (layer, ranks) in landmark_ranks(0.0).iter().enumerate() {
        let mean = ranks.iter().sum::<f64>() / ranks.len() as f64;
        assert!((mean - 0.5).abs() < 0.15, "layer {layer}: {mean}");
    }
}

#[test]
fn retention_is_one_without_eviction() {
    let cfg = StreamConfig {
        frames: 10,
        landmark_fraction: 0.3,
        ..Default::default()
    };
    let base = baseline_run(&cfg).unwrap();
    assert!(!base.landmarks.is_empty());
    assert!(landmark_retention(&base).iter().all(|&r| r == 1.0));
}

fn session(layers: usize) -> CacheSession {
    CacheSession::new(CacheConfig {
        layers,
        tokens_per_frame: 4,
        total_budget: Some(120),
        tau: 1.5,
        layer_capacity: None,
    })
    .unwrap()
}

#[test]
fn first_step_budgets_are_uniform() {
    let s = session(3);
    assert_eq!(s.budgets(), vec![Some(40); 3]);
}

#[test]
fn constant_statistics_freeze_budgets() {
    let mut s = session(3);
    reallocate_step(&mut s, &[-0.1, -0.5, -0.2]).unwrap();
    let first = s.budgets();
    for _ in 0..5 {
        reallocate_step(&mut s, &[-0.1, -0.5, -0.2]).unwrap();
        assert_eq!(s.budgets(), first);
    }
}

#[test]
fn rising_variance_never_grows_a_budget() {
    let mut s = session(3);
    let mut last = usize::MAX;
    for k in 0..40 {
        let v = 0.05 * k as f64;
        reallocate_step(&mut s, &[-0.3, -v, -0.6]).unwrap();
        let b = s.budgets()[1].unwrap();
        assert!(b <= last, "step {k}: {b} > {last}");
        last = b;
    }
    assert!(last < 40);
}
