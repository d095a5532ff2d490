#![allow(dead_code)]

use std::path::PathBuf;

use infersentry::backends::BackendDescriptor;
use infersentry::protocol::{ConditionSpec, ExperimentPlan, TestSetSpec};
use infersentry::stressors::StressorSpec;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn condition(id: &str, stressors: Vec<StressorSpec>) -> ConditionSpec {
    ConditionSpec {
        condition_id: id.to_string(),
        stressors,
    }
}

/// A quick plan: 20 inputs of 16 features, 2 trials x 50 activations.
pub fn small_plan(backend: BackendDescriptor, conditions: Vec<ConditionSpec>) -> ExperimentPlan {
    let mut plan = ExperimentPlan::single(
        "small",
        TestSetSpec {
            seed: 11,
            count: 20,
            f_in: 16,
        },
        backend,
        conditions[0].clone(),
    );
    plan.conditions = conditions;
    plan.trials_per_condition = 2;
    plan.activations_per_trial = 50;
    plan.baseline_passes = 3;
    plan.settle_ms = 50;
    plan.warmup_activations = 5;
    plan
}

pub fn fixture_server() -> String {
    env!("CARGO_BIN_EXE_infersentry-fixture-server").to_string()
}
