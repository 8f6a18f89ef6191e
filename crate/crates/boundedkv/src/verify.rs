//! Self-checks run by `boundedkv verify`: every run property that an oracle
//! or a conservation law can confirm.

use boundedkv_core::oracle::{baseline_run, brute_force_scores, compare_runs, layer_log, missing_protected};
use boundedkv_core::sim::run_stream;
use boundedkv_core::{BudgetMode, BudgetSpec, RunSummary, StreamConfig};

use crate::error::Result;
use crate::summary::{summarize, SummaryRow};
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failures: Vec<String>, ok: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed {
            ok
        } else {
            let shown: Vec<_> = failures.iter().take(3).cloned().collect();
            format!("{} failure(s): {}", failures.len(), shown.join("; "))
        };
        Check { name, passed, detail }
    }
}

/// The runs a verification is built from: the configured stream with full
/// maps, and the same stream at a full fixed-horizon budget.
pub fn cells(config: &StreamConfig) -> Vec<StreamConfig> {
    vec![
        StreamConfig {
            record_full_maps: true,
            ..config.clone()
        },
        StreamConfig {
            budget: BudgetSpec::Fraction {
                beta: 1.0,
                mode: BudgetMode::FixedHorizon,
            },
            ..config.clone()
        },
    ]
}

/// Trace bytes and summary text of one cell.
pub fn cell_artifacts(config: &StreamConfig) -> Result<(Vec<u8>, String)> {
    let run = run_stream(config)?;
    Ok((
        Trace::from_run(&run).to_bytes(),
        summarize(&[SummaryRow::new(&run, None)]),
    ))
}

pub fn run_suite(config: &StreamConfig) -> Result<Vec<Check>> {
    let [bounded_cfg, full_cfg]: [StreamConfig; 2] = cells(config).try_into().expect("two cells");
    let run = run_stream(&bounded_cfg)?;
    let baseline = baseline_run(config)?;
    let full = run_stream(&full_cfg)?;
    Ok(vec![
        full_budget(&full, &baseline)?,
        conservation(&run),
        row_normalization(&run),
        occupancy_bound(&run),
        multiply_count(&run),
        scoring_oracle(&run)?,
        protected_persistence(&run),
        trace_round_trip(&run)?,
        determinism(&bounded_cfg, &run)?,
    ])
}

fn full_budget(full: &RunSummary, baseline: &RunSummary) -> Result<Check> {
    let d = compare_runs(full, baseline)?;
    let mut failures = Vec::new();
    if d.overall_max_abs() > 1e-12 {
        failures.push(format!("max output difference {:e}", d.overall_max_abs()));
    }
    if full.total_evictions() != 0 {
        failures.push(format!("{} evictions", full.total_evictions()));
    }
    Ok(Check::new(
        "full-budget equivalence",
        failures,
        format!("max diff {:e}", d.overall_max_abs()),
    ))
}

fn conservation(run: &RunSummary) -> Check {
    let cfg = &run.config;
    let (m, h) = (cfg.tokens_per_frame as f64, cfg.heads as f64);
    let mut failures = Vec::new();
    for s in &run.steps {
        for l in &s.layers {
            if (l.stats.raw_total() - h * m).abs() > 1e-6 || (l.stats.headmean_total() - m).abs() > 1e-6 {
                failures.push(format!("step {} layer {}", s.step, l.layer));
            }
        }
    }
    Check::new("column-sum conservation", failures, "H*M raw, M head-mean".into())
}

fn row_normalization(run: &RunSummary) -> Check {
    let mut failures = Vec::new();
    for s in &run.steps {
        for l in &s.layers {
            let Some(maps) = &l.stats.full_maps else {
                failures.push(format!("step {} layer {} has no maps", s.step, l.layer));
                continue;
            };
            let bad = maps
                .iter()
                .flat_map(|m| m.chunks(l.stats.n_keys))
                .any(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-6);
            if bad {
                failures.push(format!("step {} layer {}", s.step, l.layer));
            }
        }
    }
    Check::new("attention rows sum to one", failures, "all rows within 1e-6".into())
}

fn occupancy_bound(run: &RunSummary) -> Check {
    let m = run.config.tokens_per_frame;
    let mut failures = Vec::new();
    for s in &run.steps {
        for l in &s.layers {
            if let Some(b) = l.budget_pre {
                if l.occupancy_post > b.max(l.protected_count + m) {
                    failures.push(format!("step {} layer {}: {} > {b}", s.step, l.layer, l.occupancy_post));
                }
            }
            if l.occupancy_post + l.evicted.len() != l.occupancy_pre + m {
                failures.push(format!("step {} layer {}: occupancy does not balance", s.step, l.layer));
            }
        }
    }
    Check::new(
        "occupancy bound",
        failures,
        format!(
            "peak {} tokens",
            run.steps.iter().map(|s| s.total_occupancy()).max().unwrap_or(0)
        ),
    )
}

fn multiply_count(run: &RunSummary) -> Check {
    let cfg = &run.config;
    let mut failures = Vec::new();
    for s in &run.steps {
        let expected: u64 = s
            .layers
            .iter()
            .map(|l| 2 * (cfg.tokens_per_frame * l.occupancy_post * cfg.dim) as u64)
            .sum();
        if expected != s.multiplies {
            failures.push(format!("step {}: {} != {expected}", s.step, s.multiplies));
        }
    }
    Check::new(
        "multiply count",
        failures,
        format!("mean {:.0} per step", run.mean_multiplies()),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Incremental scores of residents and eviction-time importances against a
/// direct evaluation of the logged maps.
pub fn scoring_oracle(run: &RunSummary) -> Result<Check> {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for layer in 0..run.config.layers {
        if run.steps.is_empty() {
            break;
        }
        let oracle = brute_force_scores(&layer_log(run, layer))?;
        let mut note = |what: &str, id, err: f64| {
            worst = worst.max(err);
            compared += 1;
            if err > 1e-9 {
                failures.push(format!("layer {layer} {id} {what} rel err {err:e}"));
            }
        };
        for tok in &run.final_cache[layer] {
            let Some(o) = oracle.get(&tok.id) else { continue };
            note("score", tok.id, rel_err(tok.cum_score, o.cum_score));
            if tok.exposure != o.exposure {
                note("exposure", tok.id, f64::INFINITY);
            }
        }
        for s in &run.steps {
            for ev in &s.layers[layer].evicted {
                note("importance", ev.id, rel_err(ev.importance, oracle[&ev.id].importance));
            }
        }
    }
    Ok(Check::new(
        "scoring oracle",
        failures,
        format!("{compared} values, worst rel err {worst:e}"),
    ))
}

fn protected_persistence(run: &RunSummary) -> Check {
    let failures = missing_protected(run)
        .into_iter()
        .map(|(l, id)| format!("layer {l} lost {id}"))
        .collect();
    Check::new("protected tokens persist", failures, "all resident".into())
}

fn trace_round_trip(run: &RunSummary) -> Result<Check> {
    let bytes = Trace::from_run(run).to_bytes();
    let back = Trace::from_reader(bytes.as_slice())?.to_run()?;
    let failures = if &back == run {
        Vec::new()
    } else {
        vec!["rebuilt run differs".into()]
    };
    Ok(Check::new(
        "trace round trip",
        failures,
        format!("{} bytes", bytes.len()),
    ))
}

fn determinism(config: &StreamConfig, run: &RunSummary) -> Result<Check> {
    let first = (
        Trace::from_run(run).to_bytes(),
        summarize(&[SummaryRow::new(run, None)]),
    );
    let second = cell_artifacts(config)?;
    let mut failures = Vec::new();
    if first.0 != second.0 {
        failures.push("trace bytes differ".into());
    }
    if first.1 != second.1 {
        failures.push("summary differs".into());
    }
    Ok(Check::new("determinism", failures, "byte-identical rerun".into()))
}
