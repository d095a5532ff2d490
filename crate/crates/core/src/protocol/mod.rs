//! Experiment plans, baseline capture, the trial loop and results bundles.

mod bundle;
mod plan;
mod profile;
mod records;
mod runner;

pub use bundle::{
    load_bundle, resummarize, AbortedCondition, BundleError, ConditionEntry, ResultsBundle, SummaryFile,
    META_FILE, PROFILE_FILE, SUMMARY_FILE,
};
pub use plan::{load_plan, parse_plan, ConditionSpec, ExperimentPlan, PlanError, TestSetSpec};
pub use profile::{MeanAccumulator, ReferenceProfile};
pub use records::{read_records, records_file_name, ActivationRecord, RecordRow, RecordWriter};
pub use runner::{
    capture_baseline, capture_baseline_with, measure_overhead, run_condition, run_condition_with,
    run_protocol, summarize_outcome, timed_infer, ConditionOutcome, ConditionResult, ExcludedActivation,
    NullBackend, OverheadReport, ProtocolResult, RunError, RunOptions, TrialAbort, TrialStressors,
    HARNESS_VERSION,
};
