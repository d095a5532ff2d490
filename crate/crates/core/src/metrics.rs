//! Output-deviation, exceedance-rate and latency statistics, plus the joint
//! stability/timing acceptance check.
//!
//! Everything here is a pure function over immutable inputs. Latencies are
//! integer nanoseconds throughout; conversion to milliseconds happens only in
//! the reporting layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{ActivationRecord, RecordRow, ReferenceProfile};

/// Absolute tolerance on the sum of a probability vector.
pub const SIMPLEX_SUM_TOLERANCE: f64 = 1e-9;

/// Default deviation threshold above which an activation counts as an exceedance.
pub const DEFAULT_T_STAR: f64 = 0.05;
/// Default maximum tolerated exceedance rate.
pub const DEFAULT_STER_MAX: f64 = 0.0;
/// Default cycle budget: 100 ms, one activation per cycle at 10 Hz.
pub const DEFAULT_BUDGET_NS: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("logit {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimension mismatch: {left} vs {right} classes")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{0} requires at least one sample")]
    Empty(&'static str),
    #[error("percentile {0} outside (0, 1]")]
    PercentileOutOfRange(f64),
    #[error("invalid probability vector: {0}")]
    InvalidSoftmax(String),
    #[error("no reference profile entry for input index {input_index}")]
    MissingReference { input_index: usize },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

/// A probability vector over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftmaxVector(Vec<f64>);

impl SoftmaxVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, MetricsError> {
        if probs.len() < 2 {
            return Err(MetricsError::TooFewClasses(probs.len()));
        }
        let mut sum = 0.0;
        for (k, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(MetricsError::InvalidSoftmax(format!(
                    "component {k} = {p} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOLERANCE {
            return Err(MetricsError::InvalidSoftmax(format!(
                "components sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        top_two(&self.0).0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SoftmaxVector {
    type Error = MetricsError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SoftmaxVector> for Vec<f64> {
    fn from(value: SoftmaxVector) -> Self {
        value.0
    }
}

/// Indices of the largest and second-largest entries, lowest index first on ties.
/// `probs` must have at least two entries.
pub(crate) fn top_two(probs: &[f64]) -> (usize, usize) {
    let mut first = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[first] {
            first = k;
        }
    }
    let mut second = if first == 0 { 1 } else { 0 };
    for (k, &p) in probs.iter().enumerate() {
        if k != first && p > probs[second] {
            second = k;
        }
    }
    (first, second)
}

/// Max-subtracted softmax in double precision with a fixed summation order.
pub fn softmax(logits: &[f64]) -> Result<SoftmaxVector, MetricsError> {
    if logits.len() < 2 {
        return Err(MetricsError::TooFewClasses(logits.len()));
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(MetricsError::NonFiniteLogit { index, value });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let mut total = 0.0;
    for &e in &exps {
        total += e;
    }
    for e in &mut exps {
        *e /= total;
    }
    SoftmaxVector::new(exps)
}

/// L-infinity distance between an observed output and its reference.
pub fn compute_delta(
    observed: &SoftmaxVector,
    reference: &SoftmaxVector,
) -> Result<f64, MetricsError> {
    if observed.classes() != reference.classes() {
        return Err(MetricsError::DimensionMismatch {
            left: observed.classes(),
            right: reference.classes(),
        });
    }
    Ok(observed
        .probs()
        .iter()
        .zip(reference.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// One per-activation deviation, tagged with whether it exceeded `T*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationSample {
    pub activation_index: usize,
    pub delta: f64,
    pub exceeded: bool,
}

impl DeviationSample {
    pub fn new(activation_index: usize, delta: f64, t_star: f64) -> Self {
        Self {
            activation_index,
            delta,
            exceeded: delta > t_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySample {
    pub activation_index: usize,
    pub latency_ns: u64,
}

/// Exceedance rate together with the exact count it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SterResult {
    pub ster: f64,
    pub exceed_count: u64,
    pub n: u64,
}

/// Fraction of deviations strictly greater than `t_star`.
pub fn compute_ster(deltas: &[f64], t_star: f64) -> Result<SterResult, MetricsError> {
    if deltas.is_empty() {
        return Err(MetricsError::Empty("compute_ster"));
    }
    let exceed_count = deltas.iter().filter(|&&d| d > t_star).count() as u64;
    let n = deltas.len() as u64;
    Ok(SterResult {
        ster: exceed_count as f64 / n as f64,
        exceed_count,
        n,
    })
}

/// 1-indexed nearest rank `ceil(p * n)`, clamped to `[1, n]`.
///
/// A product within 1e-9 (relative) of an integer is taken as that integer,
/// so decimal percentiles such as 0.07 select the rank they read as rather
/// than the one their binary representation rounds up to.
pub fn nearest_rank(p: f64, n: usize) -> Result<usize, MetricsError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricsError::PercentileOutOfRange(p));
    }
    if n == 0 {
        return Err(MetricsError::Empty("percentile"));
    }
    let x = p * n as f64;
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    Ok((rank as usize).clamp(1, n))
}

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest sample, no interpolation.
pub fn percentile_nearest_rank(samples: &[u64], p: f64) -> Result<u64, MetricsError> {
    let rank = nearest_rank(p, samples.len())?;
    let mut scratch = samples.to_vec();
    let (_, value, _) = scratch.select_nth_unstable(rank - 1);
    Ok(*value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_t_star")]
    pub t_star: f64,
    #[serde(default)]
    pub ster_max: f64,
    #[serde(default = "default_budget_ns")]
    pub budget_ns: u64,
}

fn default_t_star() -> f64 {
    DEFAULT_T_STAR
}

fn default_budget_ns() -> u64 {
    DEFAULT_BUDGET_NS
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            t_star: DEFAULT_T_STAR,
            ster_max: DEFAULT_STER_MAX,
            budget_ns: DEFAULT_BUDGET_NS,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.t_star > 0.0 && self.t_star < 1.0) {
            return Err(MetricsError::InvalidThresholds(format!(
                "t_star {} must lie in (0, 1)",
                self.t_star
            )));
        }
        if !(0.0..=1.0).contains(&self.ster_max) {
            return Err(MetricsError::InvalidThresholds(format!(
                "ster_max {} must lie in [0, 1]",
                self.ster_max
            )));
        }
        if self.budget_ns == 0 {
            return Err(MetricsError::InvalidThresholds(
                "budget_ns must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-condition statistics: one row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSummary {
    pub condition_id: String,
    pub n_activations: u64,
    pub exceed_count: u64,
    pub ster: f64,
    /// Threshold the exceedance count was taken against.
    pub t_star: f64,
    pub delta_mean: f64,
    pub delta_max: f64,
    pub lat_mean_ns: u64,
    /// Population SD pooled over every activation in the condition.
    pub lat_sd_ns: u64,
    pub lat_p99_ns: u64,
    pub argmax_match_rate: f64,
    /// Population SD of each trial on its own, in trial order.
    #[serde(default)]
    pub trial_sd_ns: Vec<u64>,
    #[serde(default)]
    pub excluded_activations: u64,
    #[serde(default)]
    pub aborted_trials: Vec<u32>,
}

/// Builds a summary from the persisted per-activation rows.
///
/// Deltas and argmaxes are taken as stored; the profile supplies the
/// reference argmax for the match rate and must cover every input index.
pub fn summarize_rows(
    condition_id: &str,
    rows: &[RecordRow],
    profile: &ReferenceProfile,
    thresholds: &Thresholds,
) -> Result<ConditionSummary, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty("summarize_condition"));
    }
    let mut matches = 0u64;
    for row in rows {
        let reference = profile
            .vector(row.input)
            .ok_or(MetricsError::MissingReference { input_index: row.input })?;
        if reference.argmax() == row.argmax {
            matches += 1;
        }
    }

    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let ster = compute_ster(&deltas, thresholds.t_star)?;
    let mut delta_sum = 0.0;
    let mut delta_max = 0.0f64;
    for &d in &deltas {
        delta_sum += d;
        delta_max = delta_max.max(d);
    }
    let n = rows.len() as u64;

    let latencies: Vec<u64> = rows.iter().map(|r| r.latency_ns).collect();
    let (lat_mean_ns, lat_sd_ns) = mean_and_sd(&latencies);
    let lat_p99_ns = percentile_nearest_rank(&latencies, 0.99)?;

    let mut trials: Vec<u32> = rows.iter().map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();
    let trial_sd_ns = trials
        .iter()
        .map(|&t| {
            let lat: Vec<u64> = rows
                .iter()
                .filter(|r| r.trial == t)
                .map(|r| r.latency_ns)
                .collect();
            mean_and_sd(&lat).1
        })
        .collect();

    Ok(ConditionSummary {
        condition_id: condition_id.to_string(),
        n_activations: n,
        exceed_count: ster.exceed_count,
        ster: ster.ster,
        t_star: thresholds.t_star,
        delta_mean: delta_sum / n as f64,
        delta_max,
        lat_mean_ns,
        lat_sd_ns,
        lat_p99_ns,
        argmax_match_rate: matches as f64 / n as f64,
        trial_sd_ns,
        excluded_activations: 0,
        aborted_trials: Vec::new(),
    })
}

/// Summarizes in-memory activation records, recomputing each deviation
/// against the per-input reference rather than trusting the stored value.
pub fn summarize_condition(
    records: &[ActivationRecord],
    profile: &ReferenceProfile,
    thresholds: &Thresholds,
) -> Result<ConditionSummary, MetricsError> {
    let first = records
        .first()
        .ok_or(MetricsError::Empty("summarize_condition"))?;
    let rows = records
        .iter()
        .map(|rec| {
            let reference = profile.vector(rec.input_index).ok_or(
                MetricsError::MissingReference {
                    input_index: rec.input_index,
                },
            )?;
            let mut row = rec.to_row();
            row.delta = compute_delta(&rec.output, reference)?;
            row.argmax = rec.output.argmax();
            Ok(row)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    summarize_rows(&first.condition_id, &rows, profile, thresholds)
}

/// Fraction of activations whose top-1 class equals the reference top-1.
pub fn argmax_match_rate(
    records: &[ActivationRecord],
    profile: &ReferenceProfile,
) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty("argmax_match_rate"));
    }
    let mut matches = 0usize;
    for rec in records {
        let reference = profile
            .vector(rec.input_index)
            .ok_or(MetricsError::MissingReference {
                input_index: rec.input_index,
            })?;
        if rec.output.argmax() == reference.argmax() {
            matches += 1;
        }
    }
    Ok(matches as f64 / records.len() as f64)
}

/// Rounded mean and population standard deviation of integer samples.
pub fn mean_and_sd(samples: &[u64]) -> (u64, u64) {
    if samples.is_empty() {
        return (0, 0);
    }
    let n = samples.len() as f64;
    let sum: u128 = samples.iter().map(|&x| x as u128).sum();
    let mean = sum as f64 / n;
    let var = samples
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let mean_ns = ((sum + samples.len() as u128 / 2) / samples.len() as u128) as u64;
    (mean_ns, var.sqrt().round() as u64)
}

/// Outcome of the joint stability and timing check for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub condition_id: String,
    pub ster_pass: bool,
    pub latency_pass: bool,
    pub overall_pass: bool,
    pub ster_value: f64,
    pub ster_max: f64,
    pub p99_ns: u64,
    pub budget_ns: u64,
    /// `p99 / budget - 1` when the latency branch fails, otherwise 0.
    pub budget_breach_fraction: f64,
}

pub fn evaluate_joint(summary: &ConditionSummary, thresholds: &Thresholds) -> Verdict {
    let ster_pass = summary.ster <= thresholds.ster_max;
    let latency_pass = summary.lat_p99_ns <= thresholds.budget_ns;
    let budget_breach_fraction = if latency_pass {
        0.0
    } else {
        summary.lat_p99_ns as f64 / thresholds.budget_ns as f64 - 1.0
    };
    Verdict {
        condition_id: summary.condition_id.clone(),
        ster_pass,
        latency_pass,
        overall_pass: ster_pass && latency_pass,
        ster_value: summary.ster,
        ster_max: thresholds.ster_max,
        p99_ns: summary.lat_p99_ns,
        budget_ns: thresholds.budget_ns,
        budget_breach_fraction,
    }
}
