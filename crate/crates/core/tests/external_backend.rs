//! The process adapter against the bundled fixture server.

mod common;

use std::time::{Duration, Instant};

use infersentry::backends::{
    build_backend, generate_test_set, Backend, BackendDescriptor, BackendError, ExternalBackend, FixtureBackend,
    FixtureModelSpec,
};
use infersentry::protocol::{run_condition, timed_infer, RunOptions};

const F_IN: usize = 16;

fn server(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![common::fixture_server(), "--seed".into(), "5".into()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn spawn(extra: &[&str]) -> ExternalBackend {
    ExternalBackend::spawn(&server(extra), F_IN, Duration::from_secs(10)).unwrap()
}

#[test]
fn outputs_bit_identical_to_in_process_fixture() {
    let mut ext = spawn(&[]);
    let mut local = FixtureBackend::new(FixtureModelSpec {
        seed: 5,
        f_in: F_IN,
        hidden: 32,
        classes: 10,
    });
    assert_eq!(ext.classes(), 10);
    for input in generate_test_set(3, 25, F_IN) {
        assert_eq!(ext.infer(&input).unwrap(), local.infer(&input).unwrap());
    }
    assert_eq!(ext.completed(), 25);
    ext.shutdown().unwrap();
}

#[test]
fn crash_names_last_good_activation() {
    let mut ext = spawn(&["--exit-after", "4"]);
    let inputs = generate_test_set(3, 10, F_IN);
    for input in &inputs[..4] {
        ext.infer(input).unwrap();
    }
    match ext.infer(&inputs[4]) {
        Err(e @ BackendError::ProcessExited { completed: 4, .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("after 4 completed requests"), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn mismatched_id_is_protocol_error() {
    let mut ext = spawn(&["--bad-id-at", "2"]);
    let inputs = generate_test_set(3, 5, F_IN);
    ext.infer(&inputs[0]).unwrap();
    ext.infer(&inputs[1]).unwrap();
    assert!(matches!(ext.infer(&inputs[2]), Err(BackendError::Protocol(_))));
}

#[test]
fn fixed_logits_served() {
    let mut ext = spawn(&["--fixed-logits", "0,1,-2"]);
    assert_eq!(ext.classes(), 3);
    let out = ext.infer(&generate_test_set(1, 1, F_IN)[0]).unwrap();
    assert_eq!(out.argmax(), 1);
}

#[test]
fn missing_program_is_spawn_error() {
    let result = ExternalBackend::spawn(&["/nonexistent/backend".into()], F_IN, Duration::from_secs(1));
    assert!(matches!(result, Err(BackendError::Spawn { .. })));
}

#[test]
fn process_latency_not_below_in_process() {
    let mut ext = spawn(&[]);
    let mut local = build_backend(&BackendDescriptor::fixture(5), F_IN).unwrap();
    let inputs = generate_test_set(3, 20, F_IN);
    let median = |b: &mut dyn Backend| {
        let mut lat: Vec<u64> = (0..200).map(|i| timed_infer(b, &inputs[i % 20]).1).collect();
        lat.sort_unstable();
        lat[100]
    };
    let ext_median = median(&mut ext);
    let local_median = median(local.as_mut());
    assert!(ext_median >= local_median, "external {ext_median} ns < in-process {local_median} ns");
}

#[test]
fn crash_mid_trial_keeps_prior_trials() {
    // The server dies on its 60th request: trial 0 (5 warm-up + 50) completes,
    // trial 1 aborts, trial 2 runs on a restarted process.
    let desc = BackendDescriptor::External {
        command: server(&["--exit-after", "60"]),
        deterministic: true,
        response_timeout_ms: 10_000,
    };
    let mut plan = common::small_plan(desc, vec![common::condition("zero-load", vec![])]);
    plan.trials_per_condition = 3;
    let t0 = Instant::now();
    // Baseline is 3 passes x 20 inputs: exactly the 60 requests the server answers.
    let profile = infersentry::protocol::capture_baseline(&plan).unwrap();
    let outcome = run_condition(&plan, "zero-load", &profile, &RunOptions::default(), None).unwrap();
    assert_eq!(outcome.aborted_trials.len(), 1);
    let abort = &outcome.aborted_trials[0];
    assert_eq!(abort.trial, 1);
    assert_eq!(abort.last_good_activation, Some(4));
    assert!(abort.reason.contains("completed requests"), "{}", abort.reason);
    let trials: std::collections::BTreeSet<u32> = outcome.records.iter().map(|r| r.trial_index).collect();
    assert_eq!(trials.into_iter().collect::<Vec<_>>(), vec![0, 2]);
    assert_eq!(outcome.records.len(), 100);
    assert!(outcome.records.iter().all(|r| r.delta == 0.0));
    assert!(t0.elapsed() < Duration::from_secs(60));
}
