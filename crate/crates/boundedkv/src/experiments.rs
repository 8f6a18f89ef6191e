//! Multi-run drivers shared by the command line and the acceptance tests.

use std::thread;

use boundedkv_core::oracle::{baseline_run, compare_runs, landmark_retention, DivergenceReport};
use boundedkv_core::sim::run_stream;
use boundedkv_core::{BudgetMode, BudgetSpec, PolicyKind, RunSummary, StreamConfig};

use crate::error::Result;
use crate::summary::SummaryRow;

/// Stream with sparse planted landmarks, sized so that a tenth of the tokens
/// leaves room beyond the protected floor.
pub fn landmark_preset() -> StreamConfig {
    StreamConfig {
        tokens_per_frame: 32,
        frames: 96,
        landmark_fraction: 0.015,
        landmark_gain: 4.0,
        budget: BudgetSpec::Fraction {
            beta: 0.1,
            mode: BudgetMode::FixedHorizon,
        },
        ..StreamConfig::default()
    }
}

/// Long stream under a steady-state budget.
pub fn steady_state_preset(frames: usize) -> StreamConfig {
    StreamConfig {
        tokens_per_frame: 32,
        frames,
        budget: BudgetSpec::Fraction {
            beta: 0.1,
            mode: BudgetMode::SteadyState { reference_frames: 128 },
        },
        ..StreamConfig::default()
    }
}

/// Maps `f` over `items` on scoped threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub run: RunSummary,
    pub divergence: Option<DivergenceReport>,
}

impl Cell {
    pub fn row(&self) -> SummaryRow {
        SummaryRow::new(&self.run, self.divergence.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct PolicyStats {
    pub policy: PolicyKind,
    /// Seed-averaged landmark retention per layer.
    pub retention: Vec<f64>,
    /// Seed-averaged retained baseline attention mass per layer.
    pub retained_mass: Vec<f64>,
}

impl PolicyStats {
    pub fn mean_retention(&self) -> f64 {
        self.retention.iter().sum::<f64>() / self.retention.len() as f64
    }

    pub fn mean_retained_mass(&self) -> f64 {
        self.retained_mass.iter().sum::<f64>() / self.retained_mass.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub policies: Vec<PolicyStats>,
    /// Every bounded run, grouped by seed then policy.
    pub cells: Vec<Cell>,
}

impl Ablation {
    pub fn stats(&self, policy: PolicyKind) -> Option<&PolicyStats> {
        self.policies.iter().find(|p| p.policy == policy)
    }
}

/// Runs every policy on `seeds` seeds of `base`, each compared against the
/// shared baseline of its seed.
pub fn ablate(base: &StreamConfig, policies: &[PolicyKind], seeds: &[u64]) -> Result<Ablation> {
    let per_seed = par_map(seeds, |&seed| -> Result<Vec<Cell>> {
        let cfg = StreamConfig { seed, ..base.clone() };
        let baseline = baseline_run(&cfg)?;
        policies
            .iter()
            .map(|&policy| {
                let run = run_stream(&StreamConfig { policy, ..cfg.clone() })?;
                let divergence = Some(compare_runs(&run, &baseline)?);
                Ok(Cell { run, divergence })
            })
            .collect()
    });
    let cells: Vec<Cell> = per_seed
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let layers = base.layers;
    let stats = policies
        .iter()
        .map(|&policy| {
            let mine: Vec<&Cell> = cells.iter().filter(|c| c.run.config.policy == policy).collect();
            let n = mine.len().max(1) as f64;
            let mut retention = vec![0.0; layers];
            let mut retained_mass = vec![0.0; layers];
            for c in &mine {
                for (acc, r) in retention.iter_mut().zip(landmark_retention(&c.run)) {
                    *acc += r / n;
                }
                let d = c.divergence.as_ref().expect("ablation cells carry divergence");
                for (acc, m) in retained_mass.iter_mut().zip(&d.retained_mass) {
                    *acc += m / n;
                }
            }
            PolicyStats {
                policy,
                retention,
                retained_mass,
            }
        })
        .collect();
    Ok(Ablation { policies: stats, cells })
}

/// Budget sweep: for each seed, the baseline followed by one run per beta.
pub fn sweep(base: &StreamConfig, betas: &[f64], seeds: &[u64]) -> Result<Vec<Cell>> {
    let mode = match base.budget {
        BudgetSpec::Fraction { mode, .. } => mode,
        _ => BudgetMode::FixedHorizon,
    };
    let per_seed = par_map(seeds, |&seed| -> Result<Vec<Cell>> {
        let cfg = StreamConfig { seed, ..base.clone() };
        let baseline = baseline_run(&cfg)?;
        let mut cells = vec![Cell {
            divergence: Some(compare_runs(&baseline, &baseline)?),
            run: baseline.clone(),
        }];
        for &beta in betas {
            let run = run_stream(&StreamConfig {
                budget: BudgetSpec::Fraction { beta, mode },
                ..cfg.clone()
            })?;
            let divergence = Some(compare_runs(&run, &baseline)?);
            cells.push(Cell { run, divergence });
        }
        Ok(cells)
    });
    Ok(per_seed
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}
