use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::policy::PolicyKind;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Reference stream length used by steady-state budgets unless overridden.
pub const DEFAULT_REFERENCE_FRAMES: usize = 128;
/// Default allocation temperature.
pub const DEFAULT_TAU: f64 = 1.5;

/// How a fractional budget is turned into a token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum BudgetMode {
    /// Fraction of everything the run will ever produce: `L_g * T_total * M`.
    FixedHorizon,
    /// Fraction of a configured reference stream: `L_g * reference_frames * M`.
    SteadyState { reference_frames: usize },
}

impl BudgetMode {
    pub fn name(self) -> &'static str {
        match self {
            BudgetMode::FixedHorizon => "fixed-horizon",
            BudgetMode::SteadyState { .. } => "steady-state",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum BudgetSpec {
    /// Baseline: the cache grows without bound.
    Unbounded,
    /// Absolute total budget in tokens, summed over layers.
    Tokens(usize),
    Fraction {
        beta: f64,
        mode: BudgetMode,
    },
}

impl fmt::Display for BudgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetSpec::Unbounded => f.write_str("unbounded"),
            BudgetSpec::Tokens(b) => write!(f, "{b} tokens"),
            BudgetSpec::Fraction { beta, mode } => write!(f, "beta={beta} ({})", mode.name()),
        }
    }
}

/// Everything needed to reproduce one simulated stream.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StreamConfig {
    /// Global-attention layers.
    pub layers: usize,
    pub heads: usize,
    /// Model width, divisible by `heads`.
    pub dim: usize,
    /// Tokens per frame: one camera, `registers` registers, the rest patches.
    pub tokens_per_frame: usize,
    pub registers: usize,
    pub frames: usize,
    pub budget: BudgetSpec,
    pub tau: f64,
    pub policy: PolicyKind,
    pub seed: u64,
    pub landmark_fraction: f64,
    pub landmark_gain: f64,
    /// Per-layer anchor focus of the query/key projections. Empty selects
    /// the default dense-sparse-dense profile.
    pub layer_focus: Vec<f64>,
    /// Storage width used for footprint accounting. Compute is always f64.
    pub scalar_bytes: usize,
    /// Keep full per-head attention maps in step reports.
    pub record_full_maps: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 2,
            dim: 32,
            tokens_per_frame: 8,
            registers: 0,
            frames: 24,
            budget: BudgetSpec::Fraction {
                beta: 0.5,
                mode: BudgetMode::FixedHorizon,
            },
            tau: DEFAULT_TAU,
            policy: PolicyKind::Attention,
            seed: 7,
            landmark_fraction: 0.1,
            landmark_gain: 4.0,
            layer_focus: Vec::new(),
            scalar_bytes: 4,
            record_full_maps: false,
        }
    }
}

/// Focus at the first/last layer and at the middle of the default profile.
const EDGE_FOCUS: f64 = 0.5;
const PEAK_FOCUS: f64 = 2.5;

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.tokens_per_frame < 1 + self.registers {
            return bad(format!(
                "tokens per frame {} cannot hold one camera and {} registers",
                self.tokens_per_frame, self.registers
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::BadTemperature(self.tau));
        }
        match self.budget {
            BudgetSpec::Fraction { beta, mode } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return bad(format!("beta must lie in (0, 1], got {beta}"));
                }
                if let BudgetMode::SteadyState { reference_frames: 0 } = mode {
                    return bad("steady-state reference length must be positive".into());
                }
            }
            BudgetSpec::Tokens(_) | BudgetSpec::Unbounded => {}
        }
        if !(0.0..=1.0).contains(&self.landmark_fraction) {
            return bad(format!(
                "landmark fraction must lie in [0, 1], got {}",
                self.landmark_fraction
            ));
        }
        if !(self.landmark_gain >= 0.0 && self.landmark_gain.is_finite()) {
            return bad(format!(
                "landmark gain must be finite and non-negative, got {}",
                self.landmark_gain
            ));
        }
        if !self.layer_focus.is_empty() && self.layer_focus.len() != self.layers {
            return bad(format!(
                "layer focus lists {} values for {} layers",
                self.layer_focus.len(),
                self.layers
            ));
        }
        if self.layer_focus.iter().any(|f| !f.is_finite()) {
            return bad("layer focus values must be finite".into());
        }
        if self.scalar_bytes == 0 {
            return bad("scalar width must be positive".into());
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        self.tokens_per_frame - 1 - self.registers
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Allocation temperature after the policy's override.
    pub fn effective_tau(&self) -> f64 {
        self.policy.tau(self.tau)
    }

    /// Total budget in tokens, or `None` when unbounded.
    pub fn total_budget(&self) -> Option<usize> {
        let per_frame_all_layers = (self.layers * self.tokens_per_frame) as f64;
        match self.budget {
            BudgetSpec::Unbounded => None,
            BudgetSpec::Tokens(b) => Some(b),
            BudgetSpec::Fraction { beta, mode } => {
                let frames = match mode {
                    BudgetMode::FixedHorizon => self.frames,
                    BudgetMode::SteadyState { reference_frames } => reference_frames,
                };
                // shave float noise so exact products do not round up
                let exact = beta * per_frame_all_layers * frames as f64;
                Some(libm::ceil(exact - 1e-9).max(0.0) as usize)
            }
        }
    }

    /// Most tokens a layer can ever hold over this run.
    pub fn layer_capacity(&self) -> usize {
        self.frames * self.tokens_per_frame
    }

    pub fn focus(&self) -> Vec<f64> {
        if !self.layer_focus.is_empty() {
            return self.layer_focus.clone();
        }
        (0..self.layers)
            .map(|l| {
                let s = libm::sin(core::f64::consts::PI * (l as f64 + 0.5) / self.layers as f64);
                EDGE_FOCUS + (PEAK_FOCUS - EDGE_FOCUS) * s * s
            })
            .collect()
    }

    /// True when `other` describes the same stream (same tokens, weights and
    /// generator) regardless of budget, policy or temperature.
    pub fn same_stream(&self, other: &StreamConfig) -> bool {
        self.layers == other.layers
            && self.heads == other.heads
            && self.dim == other.dim
            && self.tokens_per_frame == other.tokens_per_frame
            && self.registers == other.registers
            && self.frames == other.frames
            && self.seed == other.seed
            && self.landmark_fraction == other.landmark_fraction
            && self.landmark_gain == other.landmark_gain
            && self.focus() == other.focus()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_resolution() {
        let mut c = StreamConfig {
            budget: BudgetSpec::Fraction {
                beta: 1.0,
                mode: BudgetMode::FixedHorizon,
            },
            ..Default::default()
        };
        assert_eq!(c.total_budget(), Some(4 * 24 * 8));
        c.budget = BudgetSpec::Fraction {
            beta: 0.1,
            mode: BudgetMode::FixedHorizon,
        };
        assert_eq!(c.total_budget(), Some(77));
        c.frames = 10;
        assert_eq!(c.total_budget(), Some(32));
        c.budget = BudgetSpec::Fraction {
            beta: 0.1,
            mode: BudgetMode::SteadyState { reference_frames: 128 },
        };
        assert_eq!(c.total_budget(), Some(410));
        c.budget = BudgetSpec::Unbounded;
        assert_eq!(c.total_budget(), None);
    }

    #[test]
    fn validation() {
        assert!(StreamConfig::default().validate().is_ok());
        let cases: [fn(&mut StreamConfig); 7] = [
            |c| c.dim = 31,
            |c| c.registers = 8,
            |c| c.tau = 0.0,
            |c| {
                c.budget = BudgetSpec::Fraction {
                    beta: 1.5,
                    mode: BudgetMode::FixedHorizon,
                }
            },
            |c| {
                c.budget = BudgetSpec::Fraction {
                    beta: 0.0,
                    mode: BudgetMode::FixedHorizon,
                }
            },
            |c| c.layer_focus = alloc::vec![1.0],
            |c| c.landmark_fraction = -0.1,
        ];
        for mutate in cases {
            let mut c = StreamConfig::default();
            mutate(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn default_focus_is_dense_at_the_ends() {
        let f = StreamConfig::default().focus();
        assert!(f[0] < f[1] && f[3] < f[2]);
        assert!((f[0] - f[3]).abs() < 1e-12);
    }
}
