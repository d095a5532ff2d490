//! Published tables replayed through the renderers.

mod common;

use infersentry::protocol::{load_bundle, resummarize};
use infersentry::reporting::{parse_text_row, render_verdicts, verdict_line, ReplayFixture, ReplayLayout};

fn fixture(name: &str) -> ReplayFixture {
    let path = common::repo_root().join("fixtures/replay").join(name);
    ReplayFixture::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const ALL: [&str; 3] = ["table3-baseline.json", "table4-cpu-stress.json", "table6-cpu-contention.json"];

#[test]
fn rendered_cells_match_printed_rows() {
    for name in ALL {
        let fx = fixture(name);
        assert_eq!(fx.rendered_rows(), fx.expected_rows, "{name}");
        let text = fx.render_text();
        let rows: Vec<Vec<String>> = text.lines().skip(2).map(parse_text_row).collect();
        assert_eq!(rows, fx.expected_rows, "{name} text grid");
    }
}

#[test]
fn verdict_lines_match() {
    for name in ALL {
        let fx = fixture(name);
        let report = render_verdicts(&fx.summaries(), &fx.thresholds);
        let lines: Vec<String> = report.verdicts.iter().map(verdict_line).collect();
        assert_eq!(lines, fx.expected_verdicts, "{name}");
    }
}

#[test]
fn combined_row_and_breach() {
    let fx = fixture("table6-cpu-contention.json");
    let last = fx.rendered_rows().pop().unwrap();
    assert_eq!(last, ["Combined", "0.0000", "0.0000", "104.0 ms", "5.7 ms", "165.1 ms"]);
    let report = render_verdicts(&fx.summaries(), &fx.thresholds);
    assert_eq!(
        verdict_line(report.verdicts.last().unwrap()),
        "Combined: FAIL latency: P99 165.1 ms exceeds budget by 65.1%"
    );
    assert_eq!(report.exit_code(), 1);
}

#[test]
fn comparison_header_matches_table() {
    let fx = fixture("table4-cpu-stress.json");
    assert!(matches!(fx.layout, ReplayLayout::PathComparison { .. }));
    let header = parse_text_row(fx.render_text().lines().next().unwrap());
    assert_eq!(header, ["CPU Load", "GPU STER", "GPU Lat.", "CPU STER", "CPU Lat."]);
}

#[test]
fn bundle_agrees_with_fixture() {
    let fx = fixture("table6-cpu-contention.json");
    let bundle = load_bundle(&common::repo_root().join("fixtures/replay/table6-bundle")).unwrap();
    let stored: Vec<_> = bundle.summary.conditions.iter().map(|c| c.summary.clone()).collect();
    assert_eq!(stored, fx.summaries());
    let entries = resummarize(&bundle, &fx.thresholds).unwrap();
    for (e, stored) in entries.iter().zip(&bundle.summary.conditions) {
        assert_eq!(e.verdict, stored.verdict);
    }
}
