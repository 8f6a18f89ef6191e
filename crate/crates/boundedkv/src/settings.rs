//! Stream settings from defaults, a `key = value` file and flags, in that
//! order of precedence.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use boundedkv_core::sim::config::DEFAULT_REFERENCE_FRAMES;
use boundedkv_core::{BudgetMode, BudgetSpec, PolicyKind, StreamConfig};
use clap::{Args, ValueEnum};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    FixedHorizon,
    SteadyState,
}

/// Every stream setting, each optional so layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub tokens_per_frame: Option<usize>,
    #[arg(long)]
    pub registers: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Budget as a fraction of the token count.
    #[arg(long, visible_alias = "budget-frac", conflicts_with = "budget_tokens")]
    pub beta: Option<f64>,
    /// Absolute budget in tokens summed over layers.
    #[arg(long)]
    pub budget_tokens: Option<usize>,
    #[arg(long, value_enum)]
    pub budget_mode: Option<ModeArg>,
    /// Stream length a steady-state budget is measured against.
    #[arg(long)]
    pub reference_frames: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub landmark_frac: Option<f64>,
    #[arg(long)]
    pub landmark_gain: Option<f64>,
    /// Comma-separated per-layer anchor focus.
    #[arg(long, value_delimiter = ',')]
    pub layer_focus: Option<Vec<f64>>,
    #[arg(long)]
    pub scalar_bytes: Option<usize>,
    #[arg(long)]
    pub trace_full_maps: bool,
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: boundedkv_core::Error| e.to_string())
}

impl StreamArgs {
    /// Fields set in `over` replace those in `self`. Setting either budget
    /// form replaces both.
    pub fn merge(mut self, over: &StreamArgs) -> StreamArgs {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        if over.beta.is_some() || over.budget_tokens.is_some() {
            self.beta = over.beta;
            self.budget_tokens = over.budget_tokens;
        }
        take!(
            layers,
            heads,
            dim,
            tokens_per_frame,
            registers,
            frames,
            budget_mode,
            reference_frames,
            tau,
            policy,
            seed,
            landmark_frac,
            landmark_gain,
            layer_focus,
            scalar_bytes,
            config
        );
        self.trace_full_maps |= over.trace_full_maps;
        self
    }

    /// Parses a settings file. Keys are flag names without the leading
    /// dashes; `#` starts a comment.
    pub fn parse_file(text: &str) -> Result<StreamArgs> {
        let mut args = StreamArgs::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| AppError::Config(format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got `{line}`")))?;
            let (key, value) = (key.trim().replace('_', "-"), value.trim());
            fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
                v.parse().map_err(|_| format!("bad value `{v}`"))
            }
            let set = (|| -> std::result::Result<(), String> {
                match key.as_str() {
                    "layers" => args.layers = Some(num(value)?),
                    "heads" => args.heads = Some(num(value)?),
                    "dim" => args.dim = Some(num(value)?),
                    "tokens-per-frame" => args.tokens_per_frame = Some(num(value)?),
                    "registers" => args.registers = Some(num(value)?),
                    "frames" => args.frames = Some(num(value)?),
                    "beta" | "budget-frac" => args.beta = Some(num(value)?),
                    "budget-tokens" => args.budget_tokens = Some(num(value)?),
                    "budget-mode" => args.budget_mode = Some(ModeArg::from_str(value, false)?),
                    "reference-frames" => args.reference_frames = Some(num(value)?),
                    "tau" => args.tau = Some(num(value)?),
                    "policy" => args.policy = Some(parse_policy(value)?),
                    "seed" => args.seed = Some(num(value)?),
                    "landmark-frac" => args.landmark_frac = Some(num(value)?),
                    "landmark-gain" => args.landmark_gain = Some(num(value)?),
                    "layer-focus" => {
                        args.layer_focus = Some(value.split(',').map(|v| num(v.trim())).collect::<Result<_, _>>()?)
                    }
                    "scalar-bytes" => args.scalar_bytes = Some(num(value)?),
                    "trace-full-maps" => args.trace_full_maps = num(value)?,
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            })();
            set.map_err(bad)?;
            if args.beta.is_some() && args.budget_tokens.is_some() {
                return Err(bad("beta and budget-tokens are exclusive".into()));
            }
        }
        Ok(args)
    }

    pub fn load_file(path: &Path) -> Result<StreamArgs> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        StreamArgs::parse_file(&text)
    }

    /// Applies these settings on top of `base` and validates the result.
    pub fn apply(&self, base: StreamConfig) -> Result<StreamConfig> {
        let mut c = base;
        macro_rules! put {
            ($($src:ident => $dst:ident),*) => { $( if let Some(v) = self.$src.clone() { c.$dst = v; } )* };
        }
        put!(layers => layers, heads => heads, dim => dim, tokens_per_frame => tokens_per_frame,
             registers => registers, frames => frames, tau => tau, policy => policy, seed => seed,
             landmark_frac => landmark_fraction, landmark_gain => landmark_gain, layer_focus => layer_focus,
             scalar_bytes => scalar_bytes);
        c.record_full_maps |= self.trace_full_maps;

        let current_beta = match c.budget {
            BudgetSpec::Fraction { beta, .. } => Some(beta),
            _ => None,
        };
        let mode = match (self.budget_mode, c.budget) {
            (Some(ModeArg::FixedHorizon), _) => BudgetMode::FixedHorizon,
            (
                Some(ModeArg::SteadyState),
                BudgetSpec::Fraction {
                    mode: BudgetMode::SteadyState { reference_frames },
                    ..
                },
            ) => BudgetMode::SteadyState {
                reference_frames: self.reference_frames.unwrap_or(reference_frames),
            },
            (Some(ModeArg::SteadyState), _) => BudgetMode::SteadyState {
                reference_frames: self.reference_frames.unwrap_or(DEFAULT_REFERENCE_FRAMES),
            },
            (
                None,
                BudgetSpec::Fraction {
                    mode: BudgetMode::SteadyState { reference_frames },
                    ..
                },
            ) => BudgetMode::SteadyState {
                reference_frames: self.reference_frames.unwrap_or(reference_frames),
            },
            (None, _) => BudgetMode::FixedHorizon,
        };
        if let Some(b) = self.budget_tokens {
            if self.budget_mode.is_some() {
                return Err(AppError::Config(
                    "budget-mode applies only to a fractional budget".into(),
                ));
            }
            c.budget = BudgetSpec::Tokens(b);
        } else if let Some(beta) = self.beta.or(current_beta) {
            c.budget = BudgetSpec::Fraction { beta, mode };
        } else if self.budget_mode.is_some() {
            return Err(AppError::Config("budget-mode needs a fractional budget".into()));
        }
        if self.reference_frames.is_some() && !matches!(mode, BudgetMode::SteadyState { .. }) {
            return Err(AppError::Config(
                "reference-frames applies only to steady-state budgets".into(),
            ));
        }
        c.validate()?;
        Ok(c)
    }

    /// Resolves defaults < file (if any) < these flags on top of `base`.
    pub fn resolve(&self, base: StreamConfig) -> Result<StreamConfig> {
        let layered = match &self.config {
            Some(path) => StreamArgs::load_file(path)?.merge(self),
            None => self.clone(),
        };
        layered.apply(base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let file =
            StreamArgs::parse_file("# demo\nframes = 12\nseed=3\npolicy = uniform-budget\nbeta = 0.2\n").unwrap();
        let flags = StreamArgs {
            seed: Some(9),
            budget_tokens: Some(50),
            ..Default::default()
        };
        let c = file.merge(&flags).apply(StreamConfig::default()).unwrap();
        assert_eq!(c.frames, 12);
        assert_eq!(c.seed, 9);
        assert_eq!(c.policy, PolicyKind::UniformBudget);
        assert_eq!(c.budget, BudgetSpec::Tokens(50));
    }

    #[test]
    fn steady_state_flags() {
        let a = StreamArgs {
            beta: Some(0.1),
            budget_mode: Some(ModeArg::SteadyState),
            reference_frames: Some(64),
            ..Default::default()
        };
        let c = a.apply(StreamConfig::default()).unwrap();
        assert_eq!(
            c.budget,
            BudgetSpec::Fraction {
                beta: 0.1,
                mode: BudgetMode::SteadyState { reference_frames: 64 }
            }
        );
        let b = StreamArgs {
            budget_mode: Some(ModeArg::SteadyState),
            ..Default::default()
        };
        let c = b.apply(StreamConfig::default()).unwrap();
        assert_eq!(
            c.budget,
            BudgetSpec::Fraction {
                beta: 0.5,
                mode: BudgetMode::SteadyState {
                    reference_frames: DEFAULT_REFERENCE_FRAMES
                }
            }
        );
    }

    #[test]
    fn file_errors_name_the_line() {
        let err = StreamArgs::parse_file("frames = 3\nwidth = 9\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(StreamArgs::parse_file("frames 3").is_err());
        assert!(StreamArgs::parse_file("beta = 0.1\nbudget-tokens = 5").is_err());
        assert!(StreamArgs::parse_file("layer-focus = 1, 2 ,3").unwrap().layer_focus == Some(vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let a = StreamArgs {
            dim: Some(31),
            ..Default::default()
        };
        assert_eq!(a.apply(StreamConfig::default()).unwrap_err().exit_code(), 2);
        let a = StreamArgs {
            budget_tokens: Some(10),
            reference_frames: Some(5),
            ..Default::default()
        };
        assert_eq!(a.apply(StreamConfig::default()).unwrap_err().exit_code(), 2);
    }
}
