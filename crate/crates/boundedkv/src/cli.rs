//! Subcommands of the `boundedkv` binary.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use boundedkv_core::oracle::{baseline_run, compare_runs};
use boundedkv_core::sim::run_stream;
use boundedkv_core::{PolicyKind, StreamConfig};
use clap::{Args, Parser, Subcommand};

use crate::error::{AppError, Result};
use crate::experiments::{ablate, landmark_preset, sweep};
use crate::heatmap::export_heatmap;
use crate::settings::StreamArgs;
use crate::summary::{write_summary, SummaryRow};
use crate::trace::{read_trace, write_trace};
use crate::verify::run_suite;

/// Exit status when a verification check fails.
pub const VERIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "boundedkv", version, about = "Bounded KV-cache streaming simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one stream and write its trace and summary.
    Run(RunCmd),
    /// Sweep budget fractions over several seeds.
    Sweep(SweepCmd),
    /// Compare eviction policies on a landmark stream.
    Ablate(AblateCmd),
    /// Check the engine against its oracles.
    Verify(VerifyCmd),
    /// Heatmaps and summaries from existing traces.
    Export(ExportCmd),
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "BOUNDEDKV_OUT", default_value = "boundedkv-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunCmd {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Also run the unbounded baseline and report output divergence.
    #[arg(long)]
    pub compare_baseline: bool,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.8")]
    pub betas: Vec<f64>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    /// Settings on top of the landmark preset.
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct VerifyCmd {
    #[command(flatten)]
    pub stream: StreamArgs,
}

#[derive(Debug, Args)]
pub struct ExportCmd {
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    /// Layer to export; all layers when omitted.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Multiply each heatmap row by its step number.
    #[arg(long)]
    pub reweight: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run(c) => run(c),
        Command::Sweep(c) => run_sweep(c),
        Command::Ablate(c) => run_ablate(c),
        Command::Verify(c) => run_verify(c),
        Command::Export(c) => run_export(c),
    }
}

fn out_dir(args: &OutArgs) -> Result<&Path> {
    fs::create_dir_all(&args.out).map_err(|e| AppError::io(&args.out, e))?;
    Ok(&args.out)
}

fn print_config(c: &StreamConfig) {
    println!(
        "layers={} heads={} dim={} tokens_per_frame={} registers={} frames={} budget={} total_budget={} tau={} policy={} seed={} landmark_frac={} landmark_gain={} focus={:?}",
        c.layers,
        c.heads,
        c.dim,
        c.tokens_per_frame,
        c.registers,
        c.frames,
        c.budget,
        c.total_budget().map_or("none".into(), |b| b.to_string()),
        c.effective_tau(),
        c.policy,
        c.seed,
        c.landmark_fraction,
        c.landmark_gain,
        c.focus()
    );
}

fn seed_list(first: u64, count: u64) -> Vec<u64> {
    (0..count).map(|i| first + i).collect()
}

fn run(cmd: &RunCmd) -> Result<i32> {
    let cfg = cmd.stream.resolve(StreamConfig::default())?;
    print_config(&cfg);
    let out = out_dir(&cmd.out)?;
    let run = run_stream(&cfg)?;
    let divergence = if cmd.compare_baseline {
        let base = baseline_run(&cfg)?;
        let d = compare_runs(&run, &base)?;
        println!(
            "max_abs_diff={:e} mean_rms={:e} retained_mass={:?}",
            d.overall_max_abs(),
            d.mean_rms(),
            d.retained_mass
        );
        Some(d)
    } else {
        None
    };
    println!(
        "steps={} evictions={} peak_footprint_bytes={} mean_multiplies={}",
        run.steps.len(),
        run.total_evictions(),
        run.peak_footprint_bytes(),
        run.mean_multiplies()
    );
    write_trace(&run, &out.join("trace.jsonl"))?;
    write_summary(&[SummaryRow::new(&run, divergence.as_ref())], &out.join("summary.csv"))?;
    Ok(0)
}

fn run_sweep(cmd: &SweepCmd) -> Result<i32> {
    let cfg = cmd.stream.resolve(StreamConfig::default())?;
    for beta in &cmd.betas {
        if !(*beta > 0.0 && *beta <= 1.0) {
            return Err(AppError::Config(format!("beta must lie in (0, 1], got {beta}")));
        }
    }
    print_config(&cfg);
    let out = out_dir(&cmd.out)?;
    let cells = sweep(&cfg, &cmd.betas, &seed_list(cfg.seed, cmd.seeds))?;
    let rows: Vec<SummaryRow> = cells.iter().map(|c| c.row()).collect();
    for r in &rows {
        println!(
            "{:<8} {:<16} seed={:<4} peak_bytes={:<10} mean_multiplies={:<12.0} divergence={:.3e}",
            r.policy,
            r.budget,
            r.seed,
            r.peak_footprint_bytes,
            r.mean_multiplies,
            r.mean_divergence.unwrap_or(0.0)
        );
    }
    write_summary(&rows, &out.join("summary.csv"))?;
    Ok(0)
}

fn run_ablate(cmd: &AblateCmd) -> Result<i32> {
    let cfg = cmd.stream.resolve(landmark_preset())?;
    print_config(&cfg);
    let out = out_dir(&cmd.out)?;
    let policies = [PolicyKind::Attention, PolicyKind::UniformBudget, PolicyKind::Random];
    let result = ablate(&cfg, &policies, &seed_list(cfg.seed, cmd.seeds))?;
    let mut table = csv_table(&["policy", "layer", "landmark_retention", "retained_mass"]);
    println!(
        "{:<16} {:>10} {:>10}  per-layer retention",
        "policy", "retention", "mass"
    );
    for p in &result.policies {
        println!(
            "{:<16} {:>10.4} {:>10.4}  {:?}",
            p.policy.name(),
            p.mean_retention(),
            p.mean_retained_mass(),
            p.retention.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        );
        for (layer, (r, m)) in p.retention.iter().zip(&p.retained_mass).enumerate() {
            table.push_str(&format!("{},{layer},{r},{m}\n", p.policy.name()));
        }
        table.push_str(&format!(
            "{},mean,{},{}\n",
            p.policy.name(),
            p.mean_retention(),
            p.mean_retained_mass()
        ));
    }
    let path = out.join("ablation.csv");
    fs::write(&path, table).map_err(|e| AppError::io(&path, e))?;
    let rows: Vec<SummaryRow> = result.cells.iter().map(|c| c.row()).collect();
    write_summary(&rows, &out.join("summary.csv"))?;
    Ok(0)
}

fn csv_table(header: &[&str]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    s
}

fn run_verify(cmd: &VerifyCmd) -> Result<i32> {
    let cfg = cmd.stream.resolve(StreamConfig::default())?;
    print_config(&cfg);
    let checks = run_suite(&cfg)?;
    let mut stdout = std::io::stdout().lock();
    for c in &checks {
        let _ = writeln!(
            stdout,
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("{failed} check(s) failed");
        return Ok(VERIFY_FAILED);
    }
    Ok(0)
}

fn run_export(cmd: &ExportCmd) -> Result<i32> {
    let out = out_dir(&cmd.out)?;
    let mut rows = Vec::new();
    for path in &cmd.trace {
        let trace = read_trace(path)?;
        let stem = path
            .file_stem()
            .map_or("trace".into(), |s| s.to_string_lossy().into_owned());
        let layers: Vec<usize> = match cmd.layer {
            Some(l) => vec![l],
            None => (0..trace.header.config.layers).collect(),
        };
        for layer in layers {
            for p in export_heatmap(&trace, layer, cmd.reweight, &out.join(format!("{stem}-layer{layer}")))? {
                println!("{}", p.display());
            }
        }
        rows.push(SummaryRow::new(&trace.to_run()?, None));
    }
    write_summary(&rows, &out.join("summary.csv"))?;
    Ok(0)
}
