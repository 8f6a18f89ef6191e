use boundedkv::experiments::sweep;
use boundedkv::summary::{summarize, write_summary, SummaryRow, SUMMARY_COLUMNS};
use boundedkv_core::StreamConfig;

#[test]
fn empty_run_set_is_header_only() {
    assert_eq!(summarize(&[]), format!("{}\n", SUMMARY_COLUMNS.join(",")));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_summary(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 1);
}

#[test]
fn footprint_rises_with_beta_and_baseline_is_largest() {
    let cfg = StreamConfig {
        frames: 20,
        ..Default::default()
    };
    let cells = sweep(&cfg, &[0.1, 0.2, 0.3, 0.5, 0.8], &[7, 8]).unwrap();
    let rows: Vec<SummaryRow> = cells.iter().map(|c| c.row()).collect();
    for seed_rows in rows.chunks(6) {
        let base = &seed_rows[0];
        assert_eq!(base.policy, "none");
        assert_eq!(base.budget, "unbounded");
        assert_eq!(base.mean_divergence, Some(0.0));
        let bounded = &seed_rows[1..];
        for pair in bounded.windows(2) {
            assert!(pair[0].peak_footprint_bytes < pair[1].peak_footprint_bytes, "{pair:?}");
            assert!(pair[0].mean_multiplies < pair[1].mean_multiplies);
        }
        assert!(bounded
            .iter()
            .all(|r| r.peak_footprint_bytes < base.peak_footprint_bytes));
    }
    let text = summarize(&rows);
    assert_eq!(text.lines().count(), 1 + rows.len());
    assert_eq!(text, summarize(&rows));
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("none,unbounded,-,7,20,,"), "{first}");
}
