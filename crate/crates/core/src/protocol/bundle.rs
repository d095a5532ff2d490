//! The on-disk results bundle: `summary.json`, `profile.json`, `meta.json`
//! and one `records-<condition>.csv` per condition.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::ReferenceProfile;
use super::records::{read_records, records_file_name, RecordRow};
use super::runner::RunError;
use crate::metrics::{evaluate_joint, summarize_rows, ConditionSummary, MetricsError, Thresholds, Verdict};

pub const SUMMARY_FILE: &str = "summary.json";
pub const PROFILE_FILE: &str = "profile.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a valid results summary: {message}")]
    Format { path: PathBuf, message: String },
    #[error(
        "condition {condition_id} was summarized at T*={stored} and has no per-activation \
         records; cannot re-evaluate at T*={requested}"
    )]
    ThresholdWithoutRecords {
        condition_id: String,
        stored: f64,
        requested: f64,
    },
    #[error("condition {condition_id}: {source}")]
    Metrics {
        condition_id: String,
        #[source]
        source: MetricsError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbortedCondition {
    pub condition_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEntry {
    pub summary: ConditionSummary,
    pub verdict: Verdict,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryFile {
    pub plan_name: String,
    pub backend: String,
    pub thresholds: Thresholds,
    pub conditions: Vec<ConditionEntry>,
    #[serde(default)]
    pub aborted_conditions: Vec<AbortedCondition>,
}

impl SummaryFile {
    pub fn save(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        fs::write(&path, text + "\n").map_err(|source| RunError::Io { path, source })
    }
}

#[derive(Debug, Clone)]
pub struct ResultsBundle {
    pub dir: PathBuf,
    pub summary: SummaryFile,
    pub profile: Option<ReferenceProfile>,
    /// Per-activation rows by condition, for conditions whose CSV exists.
    pub records: BTreeMap<String, Vec<RecordRow>>,
}

/// Loads a bundle from a results directory or directly from a summary file.
/// Profile and record files are optional; summary-only bundles can still be
/// rendered and re-verified against the stored T*.
pub fn load_bundle(path: &Path) -> Result<ResultsBundle, BundleError> {
    let (dir, summary_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(SUMMARY_FILE))
    } else {
        let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        (dir, path.to_path_buf())
    };
    let text = fs::read_to_string(&summary_path).map_err(|source| BundleError::Io {
        path: summary_path.clone(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let summary: SummaryFile = serde_path_to_error::deserialize(de).map_err(|e| BundleError::Format {
        path: summary_path.clone(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })?;

    let profile_path = dir.join(PROFILE_FILE);
    let profile = if profile_path.exists() {
        Some(ReferenceProfile::load(&profile_path).map_err(|source| BundleError::Io {
            path: profile_path,
            source,
        })?)
    } else {
        None
    };

    let mut records = BTreeMap::new();
    for entry in &summary.conditions {
        let id = &entry.summary.condition_id;
        let p = dir.join(records_file_name(id));
        if p.exists() {
            let rows = read_records(&p).map_err(|source| BundleError::Io { path: p, source })?;
            records.insert(id.clone(), rows);
        }
    }
    Ok(ResultsBundle {
        dir,
        summary,
        profile,
        records,
    })
}

/// Recomputes every condition's summary and verdict under `thresholds`.
///
/// Where per-activation records and the profile are present, statistics are
/// rebuilt from rows of completed trials. Otherwise the stored summary is
/// reused, which is only valid if T* is unchanged.
pub fn resummarize(bundle: &ResultsBundle, thresholds: &Thresholds) -> Result<Vec<ConditionEntry>, BundleError> {
    bundle
        .summary
        .conditions
        .iter()
        .map(|entry| {
            let stored = &entry.summary;
            let id = &stored.condition_id;
            let summary = match (bundle.records.get(id), &bundle.profile) {
                (Some(rows), Some(profile)) => {
                    let kept: Vec<RecordRow> = rows
                        .iter()
                        .filter(|r| !stored.aborted_trials.contains(&r.trial))
                        .cloned()
                        .collect();
                    let mut s = summarize_rows(id, &kept, profile, thresholds).map_err(|source| {
                        BundleError::Metrics {
                            condition_id: id.clone(),
                            source,
                        }
                    })?;
                    s.excluded_activations = stored.excluded_activations;
                    s.aborted_trials = stored.aborted_trials.clone();
                    s
                }
                _ => {
                    if stored.t_star != thresholds.t_star {
                        return Err(BundleError::ThresholdWithoutRecords {
                            condition_id: id.clone(),
                            stored: stored.t_star,
                            requested: thresholds.t_star,
                        });
                    }
                    stored.clone()
                }
            };
            let verdict = evaluate_joint(&summary, thresholds);
            Ok(ConditionEntry { summary, verdict })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: &str, t_star: f64, p99_ms: u64, ster: f64) -> ConditionSummary {
        ConditionSummary {
            condition_id: id.into(),
            n_activations: 100,
            exceed_count: (ster * 100.0).round() as u64,
            ster,
            t_star,
            delta_mean: 0.01,
            delta_max: 0.02,
            lat_mean_ns: 50_000_000,
            lat_sd_ns: 1_000_000,
            lat_p99_ns: p99_ms * 1_000_000,
            argmax_match_rate: 1.0,
            trial_sd_ns: vec![],
            excluded_activations: 0,
            aborted_trials: vec![],
        }
    }

    fn bundle(entries: Vec<ConditionSummary>) -> ResultsBundle {
        let thresholds = Thresholds::default();
        ResultsBundle {
            dir: PathBuf::from("."),
            summary: SummaryFile {
                plan_name: "t".into(),
                backend: "fixture".into(),
                thresholds,
                conditions: entries
                    .into_iter()
                    .map(|s| ConditionEntry {
                        verdict: evaluate_joint(&s, &thresholds),
                        summary: s,
                    })
                    .collect(),
                aborted_conditions: vec![],
            },
            profile: None,
            records: BTreeMap::new(),
        }
    }

    #[test]
    fn budget_change_reevaluates_latency_only() {
        let b = bundle(vec![summary("a", 0.05, 90, 0.0)]);
        let tight = Thresholds {
            budget_ns: 80_000_000,
            ..Thresholds::default()
        };
        let out = resummarize(&b, &tight).unwrap();
        assert!(!out[0].verdict.latency_pass);
        assert!(out[0].verdict.ster_pass);
    }

    #[test]
    fn threshold_change_without_records_is_refused() {
        let b = bundle(vec![summary("a", 0.05, 90, 0.0)]);
        let other = Thresholds {
            t_star: 0.01,
            ..Thresholds::default()
        };
        assert!(matches!(
            resummarize(&b, &other),
            Err(BundleError::ThresholdWithoutRecords { .. })
        ));
    }

    #[test]
    fn summary_file_round_trips_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(vec![summary("a", 0.05, 90, 0.0), summary("b", 0.05, 120, 0.02)]);
        b.summary.save(dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.summary, b.summary);
        assert!(loaded.profile.is_none());
        let direct = load_bundle(&dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(direct.summary, b.summary);
    }
}
