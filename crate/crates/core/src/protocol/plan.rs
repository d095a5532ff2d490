use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendDescriptor;
use crate::metrics::Thresholds;
use crate::stressors::{StressorSpec, DEFAULT_SETTLE_MS};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read plan {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("plan {path}: at `{key}`: {message}")]
    Schema {
        path: PathBuf,
        key: String,
        message: String,
    },
    #[error("invalid plan: at `{key}`: {message}")]
    Invalid { key: String, message: String },
}

/// Identity of the fixed synthetic test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetSpec {
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_f_in")]
    pub f_in: usize,
}

fn default_count() -> usize {
    500
}
fn default_f_in() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub condition_id: String,
    #[serde(default)]
    pub stressors: Vec<StressorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub test_set: TestSetSpec,
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub conditions: Vec<ConditionSpec>,
    #[serde(default = "default_trials")]
    pub trials_per_condition: usize,
    #[serde(default = "default_activations")]
    pub activations_per_trial: usize,
    #[serde(default = "default_passes")]
    pub baseline_passes: usize,
    #[serde(default = "default_settle")]
    pub settle_ms: u64,
    #[serde(default = "default_warmup")]
    pub warmup_activations: usize,
}

fn default_trials() -> usize {
    10
}
fn default_activations() -> usize {
    500
}
fn default_passes() -> usize {
    10
}
fn default_settle() -> u64 {
    DEFAULT_SETTLE_MS
}
fn default_warmup() -> usize {
    50
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> PlanError {
    PlanError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

impl ExperimentPlan {
    /// A single-condition plan with defaults, convenient for programmatic runs.
    pub fn single(name: &str, test_set: TestSetSpec, backend: BackendDescriptor, condition: ConditionSpec) -> Self {
        Self {
            name: name.to_string(),
            description: None,
            test_set,
            backend,
            thresholds: Thresholds::default(),
            conditions: vec![condition],
            trials_per_condition: default_trials(),
            activations_per_trial: default_activations(),
            baseline_passes: default_passes(),
            settle_ms: default_settle(),
            warmup_activations: default_warmup(),
        }
    }

    pub fn condition(&self, condition_id: &str) -> Option<&ConditionSpec> {
        self.conditions.iter().find(|c| c.condition_id == condition_id)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for (key, v) in [
            ("test_set.count", self.test_set.count),
            ("test_set.f_in", self.test_set.f_in),
            ("trials_per_condition", self.trials_per_condition),
            ("activations_per_trial", self.activations_per_trial),
            ("baseline_passes", self.baseline_passes),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be >= 1"));
            }
        }
        self.thresholds
            .validate()
            .map_err(|e| invalid("thresholds", e.to_string()))?;
        self.backend
            .validate(self.test_set.f_in)
            .map_err(|e| invalid("backend", e.to_string()))?;
        if self.conditions.is_empty() {
            return Err(invalid("conditions", "at least one condition is required"));
        }
        let mut seen = HashSet::new();
        for (i, c) in self.conditions.iter().enumerate() {
            let key = format!("conditions[{i}].condition_id");
            if c.condition_id.is_empty()
                || !c
                    .condition_id
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '-' | '_' | '.'))
            {
                return Err(invalid(key, format!("`{}` must match [A-Za-z0-9._-]+", c.condition_id)));
            }
            if !seen.insert(c.condition_id.as_str()) {
                return Err(invalid(key, format!("duplicate condition_id `{}`", c.condition_id)));
            }
            for (j, s) in c.stressors.iter().enumerate() {
                s.validate()
                    .map_err(|e| invalid(format!("conditions[{i}].stressors[{j}]"), e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Parses and validates a plan document. Unknown keys are rejected.
pub fn parse_plan(text: &str, origin: &Path) -> Result<ExperimentPlan, PlanError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let plan: ExperimentPlan = serde_path_to_error::deserialize(de).map_err(|e| PlanError::Schema {
        path: origin.to_path_buf(),
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    plan.validate()?;
    Ok(plan)
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_plan(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "test_set": {"seed": 1, "count": 4, "f_in": 8},
        "backend": {"kind": "fixture", "seed": 2},
        "conditions": [{"condition_id": "zero-load"}]
    }"#;

    fn parse(text: &str) -> Result<ExperimentPlan, PlanError> {
        parse_plan(text, Path::new("inline.json"))
    }

    #[test]
    fn minimal_plan_gets_defaults() {
        let plan = parse(MINIMAL).unwrap();
        assert_eq!(plan.trials_per_condition, 10);
        assert_eq!(plan.activations_per_trial, 500);
        assert_eq!(plan.baseline_passes, 10);
        assert_eq!(plan.settle_ms, 2000);
        assert_eq!(plan.warmup_activations, 50);
        assert_eq!(plan.thresholds, Thresholds::default());
    }

    #[test]
    fn zero_trials_rejected() {
        let text = MINIMAL.replace(r#""name": "t","#, r#""name": "t", "trials_per_condition": 0,"#);
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("trials_per_condition"), "{err}");
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let text = MINIMAL.replace(r#""count": 4"#, r#""count": 4, "colour": "red""#);
        match parse(&text).unwrap_err() {
            PlanError::Schema { key, message, .. } => {
                assert_eq!(key, "test_set.colour");
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_stressor_kind_named() {
        let text = MINIMAL.replace(
            r#"{"condition_id": "zero-load"}"#,
            r#"{"condition_id": "x", "stressors": [{"kind": "gpu"}]}"#,
        );
        let err = parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gpu"), "{msg}");
        assert!(msg.contains("conditions[0].stressors[0]"), "{msg}");
    }

    #[test]
    fn duplicate_condition_rejected() {
        let text = MINIMAL.replace(
            r#"[{"condition_id": "zero-load"}]"#,
            r#"[{"condition_id": "a"}, {"condition_id": "a"}]"#,
        );
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn unsafe_condition_id_rejected() {
        let text = MINIMAL.replace("zero-load", "../escape");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_plan(Path::new("/nonexistent/plan.json")),
            Err(PlanError::Io { .. })
        ));
    }
}
