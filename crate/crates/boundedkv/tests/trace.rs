use boundedkv::trace::{read_trace, write_trace, Trace, TRACE_VERSION};
use boundedkv::AppError;
use boundedkv_core::oracle::{baseline_run, brute_force_scores, layer_log};
use boundedkv_core::sim::run_stream;
use boundedkv_core::{BudgetMode, BudgetSpec, PolicyKind, StreamConfig};
use proptest::prelude::*;

fn cfg(frames: usize, beta: f64) -> StreamConfig {
    StreamConfig {
        frames,
        budget: BudgetSpec::Fraction {
            beta,
            mode: BudgetMode::FixedHorizon,
        },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn round_trip_rebuilds_the_run(
        frames in 0usize..10,
        beta in 0.05f64..1.0,
        seed in any::<u64>(),
        policy in prop::sample::select(PolicyKind::ALL.to_vec()),
        registers in 0usize..3,
        maps in any::<bool>(),
        steady in any::<bool>(),
    ) {
        let mode = if steady { BudgetMode::SteadyState { reference_frames: 6 } } else { BudgetMode::FixedHorizon };
        let c = StreamConfig {
            frames,
            seed,
            registers,
            record_full_maps: maps,
            budget: if policy == PolicyKind::None { BudgetSpec::Unbounded } else { BudgetSpec::Fraction { beta, mode } },
            policy,
            ..Default::default()
        };
        let run = run_stream(&c).unwrap();
        let bytes = Trace::from_run(&run).to_bytes();
        let back = Trace::from_reader(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.to_run().unwrap(), run);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn header_comes_first_and_records_are_per_layer() {
    let run = run_stream(&cfg(5, 0.3)).unwrap();
    let text = String::from_utf8(Trace::from_run(&run).to_bytes()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with(&format!("{{\"kind\":\"header\",\"version\":{TRACE_VERSION}")));
    assert_eq!(lines.iter().filter(|l| l.contains("\"kind\":\"layer\"")).count(), 5 * 4);
    for field in [
        "\"step\":",
        "\"n_keys\":",
        "\"budget_pre\":",
        "\"budget_post\":",
        "\"occupancy_pre\":",
        "\"occupancy_post\":",
        "\"evicted\":",
        "\"col_sums_headmean\":",
        "\"col_sums_raw\":",
        "\"sigma\":",
        "\"pi\":",
        "\"multiplies\":",
        "\"footprint_bytes\":",
    ] {
        assert!(lines[1].contains(field), "{field}");
    }
    assert!(!lines[1].contains("full_maps"));
}

#[test]
fn baseline_trace_grows_without_bound() {
    let base = baseline_run(&cfg(8, 0.5)).unwrap();
    let trace = Trace::from_run(&base);
    for r in trace.records.iter().filter(|r| r.step == 8) {
        assert_eq!(r.n_keys, 8 * 8);
    }
    for r in &trace.records {
        assert_eq!(r.occupancy_post, r.occupancy_pre - r.evicted.len() + 8);
    }
}

#[test]
fn bounded_trace_feeds_the_oracle() {
    let run = run_stream(&StreamConfig {
        record_full_maps: true,
        ..cfg(12, 0.1)
    })
    .unwrap();
    let replay = Trace::from_reader(Trace::from_run(&run).to_bytes().as_slice())
        .unwrap()
        .to_run()
        .unwrap();
    for layer in 0..4 {
        let oracle = brute_force_scores(&layer_log(&replay, layer)).unwrap();
        for tok in &replay.final_cache[layer] {
            let o = oracle[&tok.id];
            assert!((tok.cum_score - o.cum_score).abs() <= 1e-9 * o.cum_score.abs());
            assert_eq!(tok.exposure, o.exposure);
        }
    }
}

#[test]
fn files_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_trace(&run_stream(&cfg(10, 0.2)).unwrap(), &a).unwrap();
    write_trace(&run_stream(&cfg(10, 0.2)).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        read_trace(&a).unwrap().to_run().unwrap(),
        run_stream(&cfg(10, 0.2)).unwrap()
    );
}

fn malformed_line(text: &str) -> usize {
    match Trace::from_reader(text.as_bytes()) {
        Err(AppError::MalformedTrace { line, .. }) => line,
        other => panic!("expected a malformed trace, got {other:?}"),
    }
}

#[test]
fn malformed_traces_report_the_line() {
    let good = String::from_utf8(Trace::from_run(&run_stream(&cfg(2, 0.5)).unwrap()).to_bytes()).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();
    assert_eq!(malformed_line(""), 1);
    assert_eq!(malformed_line(&lines[1..].join("\n")), 1);
    lines[3] = "{\"kind\":\"layer\",\"step\":\"two\"}";
    assert_eq!(malformed_line(&lines.join("\n")), 4);
    lines[3] = "not json";
    assert_eq!(malformed_line(&lines.join("\n")), 4);
    let old = good.replacen(&format!("\"version\":{TRACE_VERSION}"), "\"version\":99", 1);
    assert_eq!(malformed_line(&old), 1);
    assert!(matches!(
        read_trace(std::path::Path::new("/nonexistent/t.jsonl")),
        Err(AppError::Io { .. })
    ));
}
