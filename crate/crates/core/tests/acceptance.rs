//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in a
//! fixed order and share the paper-analog runs between criteria 1, 7 and 8.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use infersentry::backends::{BackendDescriptor, DelaySpec};
use infersentry::host::host_cpu_utilization;
use infersentry::metrics::{compute_ster, nearest_rank, percentile_nearest_rank};
use infersentry::protocol::{
    capture_baseline, load_plan, read_records, records_file_name, run_protocol, ConditionSpec, ExperimentPlan,
    ProtocolResult, RunOptions, TestSetSpec,
};
use infersentry::reporting::{render_verdicts, verdict_line, ReplayFixture};
use infersentry::splitmix::SplitMix64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn options(scratch: &Path) -> RunOptions {
    let mut o = RunOptions::default();
    o.stress.scratch_dir = scratch.to_path_buf();
    o
}

fn paper_plan() -> ExperimentPlan {
    load_plan(&repo_root().join("plans/paper-analog.json")).expect("bundled plan loads")
}

/// Idle-host CPU load before, and within 2 s after, a run.
struct Hygiene {
    idle: f64,
    after: f64,
    probe_delay: Duration,
    scratch_clean: bool,
}

fn scratch_is_clean(dir: &Path) -> bool {
    match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_none(),
        Err(_) => true,
    }
}

struct PaperRun {
    result: ProtocolResult,
    elapsed: Duration,
    hygiene: Hygiene,
}

fn paper_run(out: &Path, scratch: &Path) -> PaperRun {
    let plan = paper_plan();
    let idle = host_cpu_utilization(Duration::from_secs(1)).unwrap_or(f64::NAN);
    let t0 = Instant::now();
    let result = run_protocol(&plan, out, None, &options(scratch)).expect("paper-analog run");
    let elapsed = t0.elapsed();
    let done = Instant::now();
    let after = host_cpu_utilization(Duration::from_millis(1000)).unwrap_or(f64::NAN);
    PaperRun {
        result,
        elapsed,
        hygiene: Hygiene {
            idle,
            after,
            probe_delay: done.elapsed(),
            scratch_clean: scratch_is_clean(scratch),
        },
    }
}

fn criterion_1(run: &PaperRun) -> Outcome {
    let conds = &run.result.conditions;
    let total: u64 = conds.iter().map(|c| c.summary.n_activations).sum();
    let exceed: u64 = conds.iter().map(|c| c.summary.exceed_count).sum();
    let all_zero = conds.iter().all(|c| c.summary.ster == 0.0);
    let mean = |id: &str| {
        conds
            .iter()
            .find(|c| c.summary.condition_id == id)
            .map(|c| c.summary.lat_mean_ns as f64)
    };
    let ratio = match (mean("combined"), mean("zero-load")) {
        (Some(c), Some(z)) => c / z,
        _ => f64::NAN,
    };
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pass = all_zero
        && exceed == 0
        && conds.len() == 6
        && run.result.aborted_conditions.is_empty()
        && total >= 30_000
        && ratio >= 1.2
        && run.elapsed <= Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "STER 0 in {}/{} conditions, {exceed} exceedances over {total} activations; combined/zero-load mean latency {ratio:.2}x (need >= 1.20); {:.0} s (limit 900 s); host has {cores} logical CPU(s), criterion presumes >= 4",
            conds.iter().filter(|c| c.summary.ster == 0.0).count(),
            conds.len(),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn single_condition_plan(backend: BackendDescriptor, activations: usize) -> ExperimentPlan {
    let mut plan = ExperimentPlan::single(
        "acceptance",
        TestSetSpec {
            seed: 20240601,
            count: 500,
            f_in: 64,
        },
        backend,
        ConditionSpec {
            condition_id: "zero-load".into(),
            stressors: vec![],
        },
    );
    plan.trials_per_condition = 1;
    plan.activations_per_trial = activations;
    plan.baseline_passes = 1;
    plan
}

fn criterion_2(work: &Path, scratch: &Path) -> Outcome {
    let t0 = Instant::now();
    let clean = single_condition_plan(BackendDescriptor::fixture(42), 500);
    let profile = capture_baseline(&clean).expect("baseline");
    let mut got = Vec::new();
    for mu in [0.051, 0.049] {
        let plan = single_condition_plan(BackendDescriptor::fixture(42).drift(mu), 500);
        let dir = work.join(format!("drift-{mu}"));
        let r = run_protocol(&plan, &dir, Some(profile.clone()), &options(scratch)).expect("drift run");
        let s = &r.conditions[0].summary;
        got.push((mu, s.ster, s.n_activations, s.excluded_activations));
    }
    let elapsed = t0.elapsed();
    let pass = got[0].1 == 1.0
        && got[1].1 == 0.0
        && got.iter().all(|g| g.2 == 500 && g.3 == 0)
        && elapsed <= Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "T*=0.05: mu=0.051 -> STER {} (n={}), mu=0.049 -> STER {} (n={}); {:.1} s (limit 30 s)",
            got[0].1,
            got[0].2,
            got[1].1,
            got[1].2,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3(work: &Path, scratch: &Path) -> Outcome {
    let t0 = Instant::now();
    let mut verdicts = Vec::new();
    for ms in [120.0, 0.0] {
        let backend = BackendDescriptor::fixture(42).jitter(DelaySpec::Constant { ms });
        let mut plan = single_condition_plan(backend, 500);
        plan.warmup_activations = 5;
        let profile = capture_baseline(&single_condition_plan(BackendDescriptor::fixture(42), 500)).expect("baseline");
        let dir = work.join(format!("jitter-{ms}"));
        let r = run_protocol(&plan, &dir, Some(profile), &options(scratch)).expect("jitter run");
        verdicts.push((ms, r.conditions[0].summary.clone(), r.conditions[0].verdict.clone()));
    }
    let elapsed = t0.elapsed();
    let (_, s120, v120) = &verdicts[0];
    let (_, s0, v0) = &verdicts[1];
    let pass = !v120.latency_pass
        && v120.ster_pass
        && !v120.overall_pass
        && s120.ster == 0.0
        && v120.budget_breach_fraction >= 0.20
        && v0.overall_pass
        && elapsed <= Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "d=120 ms -> `{}` (STER {}, breach {:.1}%); d=0 -> `{}` (P99 {} ns); {:.0} s (limit 300 s)",
            verdict_line(v120),
            s120.ster,
            v120.budget_breach_fraction * 100.0,
            verdict_line(v0),
            s0.lat_p99_ns,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let mut checked = 0;
    for name in ["table3-baseline.json", "table4-cpu-stress.json", "table6-cpu-contention.json"] {
        let path = repo_root().join("fixtures/replay").join(name);
        let fx = ReplayFixture::parse(&fs::read_to_string(&path).expect("fixture readable")).expect("fixture parses");
        let rows = fx.rendered_rows();
        if rows != fx.expected_rows {
            problems.push(format!("{name}: rows differ"));
        }
        let lines: Vec<String> = render_verdicts(&fx.summaries(), &fx.thresholds)
            .verdicts
            .iter()
            .map(verdict_line)
            .collect();
        if lines != fx.expected_verdicts {
            problems.push(format!("{name}: verdict text differs"));
        }
        checked += rows.len();
        if name.starts_with("table6") {
            let combined = rows.last().cloned().unwrap_or_default();
            if combined != ["Combined", "0.0000", "0.0000", "104.0 ms", "5.7 ms", "165.1 ms"] {
                problems.push(format!("combined row {combined:?}"));
            }
            if lines.last().map(String::as_str) != Some("Combined: FAIL latency: P99 165.1 ms exceeds budget by 65.1%") {
                problems.push(format!("combined verdict {:?}", lines.last()));
            }
        }
    }
    let elapsed = t0.elapsed();
    if elapsed > Duration::from_secs(1) {
        problems.push(format!("took {elapsed:?}"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{checked} rows across 3 tables match exactly; combined verdict reports 65.1% breach ({} ms)", elapsed.as_millis())
        } else {
            problems.join("; ")
        },
    )
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut rng = SplitMix64::new(0x5EED_0005);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 2000) as usize;
        // Mix narrow ranges (many ties) with wide ones.
        let range = [3u64, 100, 1_000_000_000][(rng.next_u64() % 3) as usize];
        let samples: Vec<u64> = (0..n).map(|_| rng.next_u64() % range).collect();
        let mut sorted = samples.clone();
        sorted.sort_unstable();
        let rank = (99 * n).div_ceil(100);
        let oracle = sorted[rank - 1];
        if percentile_nearest_rank(&samples, 0.99).ok() != Some(oracle) || nearest_rank(0.99, n).ok() != Some(rank) {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        mismatches == 0 && elapsed <= Duration::from_secs(10),
        format!("{mismatches} mismatches in 1000 multisets of size 1-2000; {} ms (limit 10 s)", elapsed.as_millis()),
    )
}

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let mut rng = SplitMix64::new(0x5EED_0006);
    let grid = [0.0, 0.01, 0.025, 0.05, 0.075, 0.1, 0.5, 1.0];
    let (mut integral, mut monotone, mut boundary) = (0, 0, 0);
    for _ in 0..10_000 {
        let n = 1 + (rng.next_u64() % 200) as usize;
        let t_star = grid[1 + (rng.next_u64() % 6) as usize];
        let deltas: Vec<f64> = (0..n)
            .map(|_| match rng.next_u64() % 4 {
                0 => t_star,
                1 => grid[(rng.next_u64() % grid.len() as u64) as usize],
                _ => rng.next_unit() * 0.2,
            })
            .collect();
        let r = compute_ster(&deltas, t_star).expect("valid input");
        let brute = deltas.iter().filter(|&&d| d > t_star).count() as u64;
        if r.exceed_count == brute && (r.ster * n as f64 - brute as f64).abs() < 1e-9 {
            integral += 1;
        }
        let sters: Vec<f64> = grid[1..].iter().map(|&t| compute_ster(&deltas, t).unwrap().ster).collect();
        if sters.windows(2).all(|w| w[0] >= w[1]) {
            monotone += 1;
        }
        let at_boundary = vec![t_star; n];
        if compute_ster(&at_boundary, t_star).unwrap().exceed_count == 0 {
            boundary += 1;
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        integral == 10_000 && monotone == 10_000 && boundary == 10_000 && elapsed <= Duration::from_secs(10),
        format!(
            "integral {integral}/10000, monotone {monotone}/10000, delta = T* never counted {boundary}/10000; {} ms (limit 10 s)",
            elapsed.as_millis()
        ),
    )
}

fn stability_columns(dir: &Path, plan: &ExperimentPlan) -> Vec<String> {
    let mut rows = Vec::new();
    for c in &plan.conditions {
        for r in read_records(&dir.join(records_file_name(&c.condition_id))).expect("records readable") {
            rows.push((r.condition_id, r.trial, r.activation, r.delta.to_bits(), r.argmax));
        }
    }
    rows.sort();
    rows.into_iter()
        .map(|(c, t, a, d, m)| format!("{c},{t},{a},{:?},{m}", f64::from_bits(d)))
        .collect()
}

fn criterion_7(first: &PaperRun, first_dir: &Path, second_dir: &Path, second: &PaperRun) -> Outcome {
    let plan = paper_plan();
    let a = stability_columns(first_dir, &plan);
    let b = stability_columns(second_dir, &plan);
    let lat_differs = first
        .result
        .conditions
        .iter()
        .zip(&second.result.conditions)
        .any(|(x, y)| x.summary.lat_mean_ns != y.summary.lat_mean_ns);
    let elapsed = first.elapsed + second.elapsed;
    outcome(
        a == b && !a.is_empty() && elapsed <= Duration::from_secs(600),
        format!(
            "{} (condition, trial, activation, delta, argmax) rows {}; latency columns {}; two runs {:.0} s (limit 600 s)",
            a.len(),
            if a == b { "byte-identical" } else { "DIFFER" },
            if lat_differs { "differ" } else { "coincide" },
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(runs: &[&PaperRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let h = &r.hygiene;
        let ok = (h.after - h.idle).abs() <= 0.10 && h.probe_delay <= Duration::from_secs(2) && h.scratch_clean;
        pass &= ok;
        parts.push(format!(
            "run {}: idle {:.1}% -> post-run {:.1}% (probe ended {:.1} s after completion), scratch {}",
            i + 1,
            h.idle * 100.0,
            h.after * 100.0,
            h.probe_delay.as_secs_f64(),
            if h.scratch_clean { "empty" } else { "NOT EMPTY" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let report = infersentry::protocol::measure_overhead(100_000);
    outcome(
        report.median_ns < 50_000,
        format!(
            "empty-backend round trip median {} ns, P99 {} ns over {} samples (limit 50000 ns median)",
            report.median_ns, report.p99_ns, report.samples
        ),
    )
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let scratch = work.path().join("scratch");
    let first_dir = work.path().join("paper-analog-1");
    let second_dir = work.path().join("paper-analog-2");

    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |n: u8, name: &'static str, o: Outcome| {
        println!(
            "criterion {n} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };

    report(4, "paper-fixture replay", criterion_4());
    report(5, "percentile oracle equivalence", criterion_5());
    report(6, "STER exactness properties", criterion_6());
    report(9, "measurement overhead", criterion_9());
    report(2, "stability-axis detection", criterion_2(work.path(), &scratch));
    report(3, "timing-axis detection", criterion_3(work.path(), &scratch));

    let first = paper_run(&first_dir, &scratch);
    report(1, "orthogonality demonstration", criterion_1(&first));
    let second = paper_run(&second_dir, &scratch);
    report(7, "determinism", criterion_7(&first, &first_dir, &second_dir, &second));
    report(8, "stressor hygiene", criterion_8(&[&first, &second]));

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria PASS", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAIL (criteria {failed:?})");
        ExitCode::FAILURE
    }
}
