//! Baseline capture, per-condition trial loops and full protocol runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::bundle::{AbortedCondition, ConditionEntry, SummaryFile, META_FILE, PROFILE_FILE};
use super::plan::{ExperimentPlan, PlanError};
use super::profile::{MeanAccumulator, ReferenceProfile};
use super::records::{records_file_name, ActivationRecord, RecordWriter};
use crate::backends::{build_backend, generate_test_set, Backend, BackendError, InputVector};
use crate::host::{pin_current_thread, HostInfo};
use crate::metrics::{
    compute_delta, evaluate_joint, summarize_condition, ConditionSummary, MetricsError, SoftmaxVector,
    Verdict,
};
use crate::stressors::{orchestrate, OrchestrateError, StressConfig, StressorReport};

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("backend failed during baseline capture: {0}")]
    Baseline(#[source] BackendError),
    #[error("profile does not match plan: {0}")]
    ProfileMismatch(String),
    #[error("plan has no condition `{0}`")]
    UnknownCondition(String),
    #[error("condition {condition_id} aborted: {reason}")]
    ConditionAborted { condition_id: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stress: StressConfig,
    /// Pin the measurement thread to this logical CPU.
    pub pin_core: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedActivation {
    pub trial: u32,
    pub activation: usize,
    pub input: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAbort {
    pub trial: u32,
    /// Index of the last activation that completed before the failure.
    pub last_good_activation: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStressors {
    pub trial: u32,
    pub reports: Vec<StressorReport>,
}

#[derive(Debug, Clone)]
pub struct ConditionOutcome {
    pub condition_id: String,
    /// Records of completed trials only, in (trial, activation) order.
    pub records: Vec<ActivationRecord>,
    pub excluded: Vec<ExcludedActivation>,
    pub aborted_trials: Vec<TrialAbort>,
    pub trial_stressors: Vec<TrialStressors>,
    pub measurement_scope: String,
    pub backend_shutdown_error: Option<String>,
}

/// One timed activation. The window covers exactly the backend call
/// (inference + softmax); nothing else runs between the two clock reads.
#[inline]
pub fn timed_infer(
    backend: &mut dyn Backend,
    input: &InputVector,
) -> (Result<SoftmaxVector, BackendError>, u64) {
    let start = Instant::now();
    let out = backend.infer(input);
    let ns = start.elapsed().as_nanos() as u64;
    (out, ns.max(1))
}

fn check_profile(plan: &ExperimentPlan, profile: &ReferenceProfile) -> Result<(), RunError> {
    if profile.test_set != plan.test_set {
        return Err(RunError::ProfileMismatch(format!(
            "profile test set {:?} differs from plan test set {:?}",
            profile.test_set, plan.test_set
        )));
    }
    if profile.backend.family() != plan.backend.family() {
        return Err(RunError::ProfileMismatch(format!(
            "profile captured on {} but plan measures {}",
            profile.backend.family().label(),
            plan.backend.family().label()
        )));
    }
    if profile.vectors.len() != plan.test_set.count {
        return Err(RunError::ProfileMismatch(format!(
            "profile covers {} inputs, test set has {}",
            profile.vectors.len(),
            plan.test_set.count
        )));
    }
    Ok(())
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Zero-load reference capture using the plan's backend.
pub fn capture_baseline(plan: &ExperimentPlan) -> Result<ReferenceProfile, RunError> {
    plan.validate()?;
    let mut backend = build_backend(&plan.backend, plan.test_set.f_in).map_err(RunError::Baseline)?;
    let profile = capture_baseline_with(plan, backend.as_mut());
    let shutdown = backend.shutdown();
    let profile = profile?;
    shutdown.map_err(RunError::Baseline)?;
    Ok(profile)
}

/// Runs `baseline_passes` full passes over the test set with no stressors
/// and averages the outputs per input. Nothing is returned on failure.
pub fn capture_baseline_with(
    plan: &ExperimentPlan,
    backend: &mut dyn Backend,
) -> Result<ReferenceProfile, RunError> {
    let test_set = generate_test_set(plan.test_set.seed, plan.test_set.count, plan.test_set.f_in);
    let done = orchestrate(&[], Duration::ZERO, &StressConfig::default(), |_| {
        let mut acc = vec![MeanAccumulator::new(); test_set.len()];
        for _ in 0..plan.baseline_passes {
            for (input, slot) in test_set.iter().zip(acc.iter_mut()) {
                let out = backend.infer(input)?;
                slot.push(&out)?;
            }
        }
        acc.into_iter()
            .map(|a| a.finish().map_err(BackendError::from))
            .collect::<Result<Vec<_>, BackendError>>()
    });
    let vectors = match done {
        Ok(o) => o.value,
        Err(OrchestrateError::Body { source, .. }) => return Err(RunError::Baseline(source)),
        Err(OrchestrateError::Startup(e)) => {
            unreachable!("no stressors were requested: {e}")
        }
    };
    Ok(ReferenceProfile {
        test_set: plan.test_set,
        backend: plan.backend.clone(),
        passes: plan.baseline_passes,
        created_unix_ms: unix_ms(),
        harness_version: HARNESS_VERSION.to_string(),
        vectors,
    })
}

struct TrialData {
    records: Vec<ActivationRecord>,
    excluded: Vec<ExcludedActivation>,
}

struct TrialFailure {
    excluded: Vec<ExcludedActivation>,
    abort: TrialAbort,
}

struct TrialContext<'a> {
    condition_id: &'a str,
    trial: u32,
    activations: usize,
    warmup: usize,
    test_set: &'a [InputVector],
    profile: &'a ReferenceProfile,
}

fn run_trial(
    ctx: &TrialContext<'_>,
    backend: &mut dyn Backend,
    mut sink: Option<&mut RecordWriter>,
) -> Result<TrialData, TrialFailure> {
    let mut excluded = Vec::new();
    let fail = |excluded: Vec<ExcludedActivation>, last: Option<usize>, reason: String| TrialFailure {
        excluded,
        abort: TrialAbort {
            trial: ctx.trial,
            last_good_activation: last,
            reason,
        },
    };

    for w in 0..ctx.warmup {
        if let Err(e) = backend.infer(&ctx.test_set[w % ctx.test_set.len()]) {
            if !e.is_per_activation() {
                return Err(fail(excluded, None, format!("warm-up activation {w}: {e}")));
            }
        }
    }

    let mut records = Vec::with_capacity(ctx.activations);
    let mut last_good = None;
    for a in 0..ctx.activations {
        let input = &ctx.test_set[a % ctx.test_set.len()];
        let (result, latency_ns) = timed_infer(backend, input);
        let output = match result {
            Ok(out) => out,
            Err(e) if e.is_per_activation() => {
                excluded.push(ExcludedActivation {
                    trial: ctx.trial,
                    activation: a,
                    input: input.input_index,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => {
                return Err(fail(
                    excluded,
                    last_good,
                    format!("activation {a} (input {}): {e}", input.input_index),
                ))
            }
        };
        let reference = ctx
            .profile
            .vector(input.input_index)
            .expect("profile covers the test set");
        let delta = match compute_delta(&output, reference) {
            Ok(d) => d,
            Err(e) => return Err(fail(excluded, last_good, format!("activation {a}: {e}"))),
        };
        let record = ActivationRecord {
            condition_id: ctx.condition_id.to_string(),
            trial_index: ctx.trial,
            activation_index: a,
            input_index: input.input_index,
            latency_ns,
            argmax: output.argmax(),
            output,
            delta,
        };
        if let Some(w) = sink.as_deref_mut() {
            if let Err(e) = w.write(&record.to_row()) {
                return Err(fail(excluded, last_good, format!("persisting activation {a}: {e}")));
            }
        }
        records.push(record);
        last_good = Some(a);
    }
    Ok(TrialData { records, excluded })
}

/// Runs every trial of one condition using backends from `factory`. The
/// factory is called once at condition start and again after any trial
/// aborts on a backend failure.
pub fn run_condition_with(
    plan: &ExperimentPlan,
    condition_id: &str,
    profile: &ReferenceProfile,
    factory: &mut dyn FnMut() -> Result<Box<dyn Backend>, BackendError>,
    options: &RunOptions,
    mut sink: Option<&mut RecordWriter>,
) -> Result<ConditionOutcome, RunError> {
    let condition = plan
        .condition(condition_id)
        .ok_or_else(|| RunError::UnknownCondition(condition_id.to_string()))?;
    check_profile(plan, profile)?;
    let aborted = |reason: String| RunError::ConditionAborted {
        condition_id: condition_id.to_string(),
        reason,
    };
    let test_set = generate_test_set(plan.test_set.seed, plan.test_set.count, plan.test_set.f_in);
    let mut backend = factory().map_err(|e| aborted(format!("backend start failed: {e}")))?;
    if let Some(core) = options.pin_core {
        if let Err(e) = pin_current_thread(core) {
            warn!("could not pin measurement thread to cpu {core}: {e}");
        }
    }

    let mut outcome = ConditionOutcome {
        condition_id: condition_id.to_string(),
        records: Vec::with_capacity(plan.trials_per_condition * plan.activations_per_trial),
        excluded: Vec::new(),
        aborted_trials: Vec::new(),
        trial_stressors: Vec::new(),
        measurement_scope: backend.measurement_scope(),
        backend_shutdown_error: None,
    };
    let settle = Duration::from_millis(plan.settle_ms);

    for trial in 0..plan.trials_per_condition as u32 {
        let ctx = TrialContext {
            condition_id,
            trial,
            activations: plan.activations_per_trial,
            warmup: if trial == 0 { plan.warmup_activations } else { 0 },
            test_set: &test_set,
            profile,
        };
        let trial_sink = sink.as_deref_mut();
        let result = orchestrate(&condition.stressors, settle, &options.stress, |_| {
            run_trial(&ctx, backend.as_mut(), trial_sink)
        });
        match result {
            Ok(done) => {
                outcome.records.extend(done.value.records);
                outcome.excluded.extend(done.value.excluded);
                outcome.trial_stressors.push(TrialStressors {
                    trial,
                    reports: done.reports,
                });
            }
            Err(OrchestrateError::Startup(e)) => {
                let _ = backend.shutdown();
                return Err(aborted(format!("stressor startup failed in trial {trial}: {e}")));
            }
            Err(OrchestrateError::Body { source, reports }) => {
                warn!(
                    "condition {condition_id} trial {trial} aborted: {}",
                    source.abort.reason
                );
                outcome.excluded.extend(source.excluded);
                outcome.aborted_trials.push(source.abort);
                outcome.trial_stressors.push(TrialStressors { trial, reports });
                let _ = backend.shutdown();
                match factory() {
                    Ok(b) => backend = b,
                    Err(e) => {
                        for rest in trial + 1..plan.trials_per_condition as u32 {
                            outcome.aborted_trials.push(TrialAbort {
                                trial: rest,
                                last_good_activation: None,
                                reason: format!("backend restart failed: {e}"),
                            });
                        }
                        return Ok(outcome);
                    }
                }
            }
        }
        info!("condition {condition_id}: trial {} of {} done", trial + 1, plan.trials_per_condition);
    }
    if let Err(e) = backend.shutdown() {
        outcome.backend_shutdown_error = Some(e.to_string());
    }
    Ok(outcome)
}

/// [`run_condition_with`] using the plan's own backend descriptor.
pub fn run_condition(
    plan: &ExperimentPlan,
    condition_id: &str,
    profile: &ReferenceProfile,
    options: &RunOptions,
    sink: Option<&mut RecordWriter>,
) -> Result<ConditionOutcome, RunError> {
    let mut factory = || build_backend(&plan.backend, plan.test_set.f_in);
    run_condition_with(plan, condition_id, profile, &mut factory, options, sink)
}

#[derive(Debug, Clone)]
pub struct ConditionResult {
    pub outcome: ConditionOutcome,
    pub summary: ConditionSummary,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub out_dir: PathBuf,
    pub profile: ReferenceProfile,
    pub conditions: Vec<ConditionResult>,
    pub aborted_conditions: Vec<AbortedCondition>,
}

impl ProtocolResult {
    pub fn all_pass(&self) -> bool {
        self.aborted_conditions.is_empty() && self.conditions.iter().all(|c| c.verdict.overall_pass)
    }
}

/// Summary of completed trials with exclusions and aborts attached.
pub fn summarize_outcome(
    outcome: &ConditionOutcome,
    profile: &ReferenceProfile,
    plan: &ExperimentPlan,
) -> Result<ConditionSummary, MetricsError> {
    let mut summary = summarize_condition(&outcome.records, profile, &plan.thresholds)?;
    summary.excluded_activations = outcome.excluded.len() as u64;
    summary.aborted_trials = outcome.aborted_trials.iter().map(|a| a.trial).collect();
    Ok(summary)
}

/// Baseline (unless a profile is supplied), every condition in plan order,
/// then summaries and verdicts. Writes the results bundle into `out_dir`.
pub fn run_protocol(
    plan: &ExperimentPlan,
    out_dir: &Path,
    profile: Option<ReferenceProfile>,
    options: &RunOptions,
) -> Result<ProtocolResult, RunError> {
    plan.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let started = unix_ms();
    let profile = match profile {
        Some(p) => {
            check_profile(plan, &p)?;
            p
        }
        None => {
            info!("capturing zero-load baseline ({} passes)", plan.baseline_passes);
            capture_baseline(plan)?
        }
    };
    let profile_path = out_dir.join(PROFILE_FILE);
    profile.save(&profile_path).map_err(io_err(&profile_path))?;

    let mut conditions = Vec::new();
    let mut aborted_conditions = Vec::new();
    let mut meta_conditions = Vec::new();
    for cond in &plan.conditions {
        let id = &cond.condition_id;
        info!("running condition {id}");
        let path = out_dir.join(records_file_name(id));
        let mut writer = RecordWriter::create(&path).map_err(io_err(&path))?;
        match run_condition(plan, id, &profile, options, Some(&mut writer)) {
            Ok(outcome) => {
                writer.finish().map_err(io_err(&path))?;
                meta_conditions.push(json!({
                    "condition_id": id,
                    "stressors": cond.stressors,
                    "trials": outcome.trial_stressors,
                    "aborted_trials": outcome.aborted_trials,
                    "excluded_activations": outcome.excluded,
                    "backend_shutdown_error": outcome.backend_shutdown_error,
                    "measurement_scope": outcome.measurement_scope,
                }));
                if outcome.records.is_empty() {
                    aborted_conditions.push(AbortedCondition {
                        condition_id: id.clone(),
                        reason: "no trial completed".into(),
                    });
                    continue;
                }
                let summary = summarize_outcome(&outcome, &profile, plan)?;
                let verdict = evaluate_joint(&summary, &plan.thresholds);
                conditions.push(ConditionResult {
                    outcome,
                    summary,
                    verdict,
                });
            }
            Err(RunError::ConditionAborted { condition_id, reason }) => {
                warn!("condition {condition_id} aborted: {reason}");
                meta_conditions.push(json!({
                    "condition_id": condition_id,
                    "stressors": cond.stressors,
                    "aborted": reason,
                }));
                aborted_conditions.push(AbortedCondition { condition_id, reason });
            }
            Err(e) => return Err(e),
        }
    }

    let summary_file = SummaryFile {
        plan_name: plan.name.clone(),
        backend: plan.backend.label(),
        thresholds: plan.thresholds,
        conditions: conditions
            .iter()
            .map(|c| ConditionEntry {
                summary: c.summary.clone(),
                verdict: c.verdict.clone(),
            })
            .collect(),
        aborted_conditions: aborted_conditions.clone(),
    };
    summary_file.save(out_dir)?;

    let scope = conditions
        .first()
        .map(|c| c.outcome.measurement_scope.clone())
        .unwrap_or_default();
    let meta = json!({
        "harness_version": HARNESS_VERSION,
        "plan_name": plan.name,
        "plan": plan,
        "backend": plan.backend,
        "backend_label": plan.backend.label(),
        "deterministic_backend": plan.backend.is_deterministic(),
        "measurement_scope": scope,
        "latency_clock": "monotonic (std::time::Instant), integer nanoseconds",
        "sd_definition": "lat_sd_ns pooled population SD over all activations; trial_sd_ns per trial",
        "p99_definition": "nearest-rank order statistic pooled over all trials",
        "seeds": {
            "test_set": plan.test_set.seed,
            "backend": plan.backend.family(),
        },
        "host": HostInfo::collect(),
        "harness_overhead": measure_overhead(10_000),
        "pin_core": options.pin_core,
        "scratch_dir": options.stress.scratch_dir,
        "started_unix_ms": started,
        "finished_unix_ms": unix_ms(),
        "conditions": meta_conditions,
    });
    let meta_path = out_dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text + "\n").map_err(io_err(&meta_path))?;

    Ok(ProtocolResult {
        out_dir: out_dir.to_path_buf(),
        profile,
        conditions,
        aborted_conditions,
    })
}

/// Backend that returns a fixed vector, for timing the harness itself.
pub struct NullBackend {
    output: SoftmaxVector,
}

impl NullBackend {
    pub fn new(classes: usize) -> Self {
        let p = 1.0 / classes as f64;
        Self {
            output: SoftmaxVector::new(vec![p; classes]).expect("uniform vector is valid"),
        }
    }
}

impl Backend for NullBackend {
    fn classes(&self) -> usize {
        self.output.classes()
    }

    fn infer(&mut self, _input: &InputVector) -> Result<SoftmaxVector, BackendError> {
        Ok(self.output.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OverheadReport {
    pub samples: usize,
    pub median_ns: u64,
    pub p99_ns: u64,
}

/// Times `samples` activations of [`NullBackend`] through the same timed
/// window the trial loop uses.
pub fn measure_overhead(samples: usize) -> OverheadReport {
    let mut backend = NullBackend::new(10);
    let input = InputVector {
        input_index: 0,
        values: vec![0.0; 4],
    };
    let mut lat: Vec<u64> = (0..samples.max(1))
        .map(|_| timed_infer(&mut backend, &input).1)
        .collect();
    lat.sort_unstable();
    let pick = |p: f64| {
        let rank = crate::metrics::nearest_rank(p, lat.len()).expect("valid percentile");
        lat[rank - 1]
    };
    OverheadReport {
        samples: lat.len(),
        median_ns: pick(0.5),
        p99_ns: pick(0.99),
    }
}
