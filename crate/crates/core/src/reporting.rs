//! Tables, verdict text, latency CDFs and STER-vs-latency scatter data.
//!
//! Everything here is a pure function of loaded summaries or records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{evaluate_joint, nearest_rank, ConditionSummary, MetricsError, Thresholds, Verdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot build a CDF for condition {0}: no latency samples")]
    EmptyCdf(String),
    #[error("summary csv: {0}")]
    Csv(String),
    #[error("summary json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Milliseconds with one decimal, rounded half-up on the integer nanoseconds.
pub fn format_ms(ns: u64) -> String {
    let tenths = (ns as u128 + 50_000) / 100_000;
    format!("{}.{} ms", tenths / 10, tenths % 10)
}

/// Four decimals, as the published tables print STER and δ_mean.
pub fn format_ratio(x: f64) -> String {
    format!("{x:.4}")
}

/// Budget overshoot in tenths of a percent, rounded half-up.
fn breach_tenths_pct(p99_ns: u64, budget_ns: u64) -> u128 {
    let over = p99_ns.saturating_sub(budget_ns) as u128;
    let b = budget_ns as u128;
    (over * 2000 + b) / (2 * b)
}

pub fn format_breach(p99_ns: u64, budget_ns: u64) -> String {
    let t = breach_tenths_pct(p99_ns, budget_ns);
    format!("{}.{}%", t / 10, t % 10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

pub const SUMMARY_COLUMNS: [&str; 6] = ["Condition", "STER", "δ_mean", "Lat. mean", "Lat. SD", "P99"];

/// Display cells of one summary row: label, STER, δ_mean, mean, SD, P99.
pub fn summary_cells(label: &str, s: &ConditionSummary) -> Vec<String> {
    vec![
        label.to_string(),
        format_ratio(s.ster),
        format_ratio(s.delta_mean),
        format_ms(s.lat_mean_ns),
        format_ms(s.lat_sd_ns),
        format_ms(s.lat_p99_ns),
    ]
}

/// Column-aligned text with ` | ` separators; the first column is left
/// aligned, the rest right aligned.
pub fn render_text_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain(std::iter::once(header[c].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (c, cell) in cells.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c > 0 {
                out.push_str(" | ");
                out.extend(std::iter::repeat_n(' ', pad));
                out.push_str(cell);
            } else {
                out.push_str(cell);
                out.extend(std::iter::repeat_n(' ', pad));
            }
        }
        out.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    let rule: usize = widths.iter().sum::<usize>() + 3 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Splits a text-grid row back into trimmed cells.
pub fn parse_text_row(line: &str) -> Vec<String> {
    line.split(" | ").map(|c| c.trim().to_string()).collect()
}

pub fn render_summary_table(summaries: &[ConditionSummary], format: TableFormat) -> String {
    match format {
        TableFormat::Text => {
            let header: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<String>> = summaries
                .iter()
                .map(|s| summary_cells(&s.condition_id, s))
                .collect();
            render_text_grid(&header, &rows)
        }
        TableFormat::Csv => render_summary_csv(summaries),
        TableFormat::Json => {
            serde_json::to_string_pretty(summaries).expect("summaries serialize") + "\n"
        }
    }
}

const CSV_HEADER: [&str; 14] = [
    "condition_id",
    "n_activations",
    "exceed_count",
    "ster",
    "t_star",
    "delta_mean",
    "delta_max",
    "lat_mean_ns",
    "lat_sd_ns",
    "lat_p99_ns",
    "argmax_match_rate",
    "trial_sd_ns",
    "excluded_activations",
    "aborted_trials",
];

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn render_summary_csv(summaries: &[ConditionSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for s in summaries {
        w.write_record([
            s.condition_id.clone(),
            s.n_activations.to_string(),
            s.exceed_count.to_string(),
            s.ster.to_string(),
            s.t_star.to_string(),
            s.delta_mean.to_string(),
            s.delta_max.to_string(),
            s.lat_mean_ns.to_string(),
            s.lat_sd_ns.to_string(),
            s.lat_p99_ns.to_string(),
            s.argmax_match_rate.to_string(),
            join(&s.trial_sd_ns),
            s.excluded_activations.to_string(),
            join(&s.aborted_trials),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn parse_list<T: std::str::FromStr>(cell: &str, column: &str) -> Result<Vec<T>, ReportError> {
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    cell.split(';')
        .map(|x| {
            x.parse()
                .map_err(|_| ReportError::Csv(format!("bad {column} entry `{x}`")))
        })
        .collect()
}

/// Inverse of the csv rendering.
pub fn parse_summary_csv(text: &str) -> Result<Vec<ConditionSummary>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| ReportError::Csv(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(ReportError::Csv(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ReportError::Csv(e.to_string()))?;
        fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, ReportError> {
            rec[i]
                .parse()
                .map_err(|_| ReportError::Csv(format!("bad {} value `{}`", CSV_HEADER[i], &rec[i])))
        }
        out.push(ConditionSummary {
            condition_id: rec[0].to_string(),
            n_activations: num(&rec, 1)?,
            exceed_count: num(&rec, 2)?,
            ster: num(&rec, 3)?,
            t_star: num(&rec, 4)?,
            delta_mean: num(&rec, 5)?,
            delta_max: num(&rec, 6)?,
            lat_mean_ns: num(&rec, 7)?,
            lat_sd_ns: num(&rec, 8)?,
            lat_p99_ns: num(&rec, 9)?,
            argmax_match_rate: num(&rec, 10)?,
            trial_sd_ns: parse_list(&rec[11], CSV_HEADER[11])?,
            excluded_activations: num(&rec, 12)?,
            aborted_trials: parse_list(&rec[13], CSV_HEADER[13])?,
        });
    }
    Ok(out)
}

pub fn parse_summary_json(text: &str) -> Result<Vec<ConditionSummary>, ReportError> {
    Ok(serde_json::from_str(text)?)
}

/// One path's results for a side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathColumn {
    pub label: String,
    /// Print latency as an approximation (`≈ 10.6 ms`).
    #[serde(default)]
    pub approximate_latency: bool,
    pub summaries: Vec<ConditionSummary>,
}

/// Cells of a comparison row: condition label, then STER and mean latency
/// for each path in order.
pub fn path_comparison_rows(row_labels: &[String], paths: &[PathColumn]) -> Vec<Vec<String>> {
    row_labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let mut cells = vec![label.clone()];
            for p in paths {
                match p.summaries.get(i) {
                    Some(s) => {
                        cells.push(format_ratio(s.ster));
                        let lat = format_ms(s.lat_mean_ns);
                        cells.push(if p.approximate_latency { format!("≈ {lat}") } else { lat });
                    }
                    None => cells.extend(["-".to_string(), "-".to_string()]),
                }
            }
            cells
        })
        .collect()
}

pub fn render_path_comparison(first_header: &str, row_labels: &[String], paths: &[PathColumn]) -> String {
    let mut header = vec![first_header.to_string()];
    for p in paths {
        header.push(format!("{} STER", p.label));
        header.push(format!("{} Lat.", p.label));
    }
    render_text_grid(&header, &path_comparison_rows(row_labels, paths))
}

/// One-line description of a verdict, naming each failing branch.
pub fn verdict_line(v: &Verdict) -> String {
    if v.overall_pass {
        return format!("{}: PASS", v.condition_id);
    }
    let mut parts = Vec::new();
    if !v.ster_pass {
        parts.push(format!(
            "FAIL stability: STER {} exceeds STER_max {}",
            format_ratio(v.ster_value),
            format_ratio(v.ster_max)
        ));
    }
    if !v.latency_pass {
        parts.push(format!(
            "FAIL latency: P99 {} exceeds budget by {}",
            format_ms(v.p99_ns),
            format_breach(v.p99_ns, v.budget_ns)
        ));
    }
    format!("{}: {}", v.condition_id, parts.join("; "))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictReport {
    pub thresholds: Thresholds,
    pub verdicts: Vec<Verdict>,
    pub all_pass: bool,
}

impl VerdictReport {
    /// Gate status: 0 iff every condition passes.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass {
            0
        } else {
            1
        }
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for v in &self.verdicts {
            out.push_str(&verdict_line(v));
            out.push('\n');
        }
        let failed = self.verdicts.iter().filter(|v| !v.overall_pass).count();
        let _ = writeln!(
            out,
            "overall: {} ({} of {} conditions failed; T*={}, STER_max={}, budget={})",
            if self.all_pass { "PASS" } else { "FAIL" },
            failed,
            self.verdicts.len(),
            self.thresholds.t_star,
            self.thresholds.ster_max,
            format_ms(self.thresholds.budget_ns)
        );
        out
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialize") + "\n"
    }
}

pub fn render_verdicts(summaries: &[ConditionSummary], thresholds: &Thresholds) -> VerdictReport {
    let verdicts: Vec<Verdict> = summaries.iter().map(|s| evaluate_joint(s, thresholds)).collect();
    VerdictReport {
        thresholds: *thresholds,
        all_pass: verdicts.iter().all(|v| v.overall_pass),
        verdicts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub latency_ns: u64,
    /// Samples at or below `latency_ns`.
    pub cum_count: u64,
    pub cum_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub condition_id: String,
    pub n: u64,
    pub points: Vec<CdfPoint>,
}

pub fn build_cdf(condition_id: &str, latencies: &[u64]) -> Result<CdfSeries, ReportError> {
    if latencies.is_empty() {
        return Err(ReportError::EmptyCdf(condition_id.to_string()));
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u64;
    let mut points: Vec<CdfPoint> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let count = i as u64 + 1;
        match points.last_mut() {
            Some(p) if p.latency_ns == x => p.cum_count = count,
            _ => points.push(CdfPoint {
                latency_ns: x,
                cum_count: count,
                cum_fraction: 0.0,
            }),
        }
    }
    for p in &mut points {
        p.cum_fraction = p.cum_count as f64 / n as f64;
    }
    Ok(CdfSeries {
        condition_id: condition_id.to_string(),
        n,
        points,
    })
}

impl CdfSeries {
    /// Fraction of samples at or below `latency_ns`.
    pub fn fraction_at(&self, latency_ns: u64) -> f64 {
        let idx = self.points.partition_point(|p| p.latency_ns <= latency_ns);
        match idx {
            0 => 0.0,
            i => self.points[i - 1].cum_fraction,
        }
    }

    /// Nearest-rank percentile read off the series: the first point whose
    /// cumulative count reaches the rank.
    pub fn percentile(&self, p: f64) -> Result<u64, ReportError> {
        let rank = nearest_rank(p, self.n as usize)? as u64;
        let idx = self.points.partition_point(|pt| pt.cum_count < rank);
        Ok(self.points[idx].latency_ns)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("latency_ns,cum_fraction\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{}", p.latency_ns, p.cum_fraction);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub path_label: String,
    pub condition_id: String,
    pub ster: f64,
    pub lat_mean_ns: u64,
}

/// One point per condition per backend, in input order.
pub fn build_scatter(paths: &[(String, Vec<ConditionSummary>)]) -> Vec<ScatterPoint> {
    paths
        .iter()
        .flat_map(|(label, summaries)| {
            summaries.iter().map(move |s| ScatterPoint {
                path_label: label.clone(),
                condition_id: s.condition_id.clone(),
                ster: s.ster,
                lat_mean_ns: s.lat_mean_ns,
            })
        })
        .collect()
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["backend", "condition", "ster", "lat_mean_ns"])
        .expect("in-memory write");
    for p in points {
        w.write_record([
            p.path_label.clone(),
            p.condition_id.clone(),
            p.ster.to_string(),
            p.lat_mean_ns.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// A published results table encoded as summaries plus the exact cells the
/// table prints, so formatting can be checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFixture {
    pub table: String,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub layout: ReplayLayout,
    pub expected_rows: Vec<Vec<String>>,
    #[serde(default)]
    pub expected_verdicts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReplayLayout {
    /// Condition, STER, δ_mean, Lat. mean, Lat. SD, P99.
    Summary {
        first_column: String,
        summaries: Vec<ConditionSummary>,
    },
    /// Condition, then STER and mean latency per path.
    PathComparison {
        first_column: String,
        row_labels: Vec<String>,
        paths: Vec<PathColumn>,
    },
}

impl ReplayFixture {
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn rendered_rows(&self) -> Vec<Vec<String>> {
        match &self.layout {
            ReplayLayout::Summary { summaries, .. } => summaries
                .iter()
                .map(|s| summary_cells(&s.condition_id, s))
                .collect(),
            ReplayLayout::PathComparison { row_labels, paths, .. } => path_comparison_rows(row_labels, paths),
        }
    }

    pub fn render_text(&self) -> String {
        match &self.layout {
            ReplayLayout::Summary { first_column, .. } => {
                let mut header: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
                header[0] = first_column.clone();
                render_text_grid(&header, &self.rendered_rows())
            }
            ReplayLayout::PathComparison {
                first_column,
                row_labels,
                paths,
            } => render_path_comparison(first_column, row_labels, paths),
        }
    }

    /// Summaries in table order; a comparison flattens paths one after another.
    pub fn summaries(&self) -> Vec<ConditionSummary> {
        match &self.layout {
            ReplayLayout::Summary { summaries, .. } => summaries.clone(),
            ReplayLayout::PathComparison { paths, .. } => {
                paths.iter().flat_map(|p| p.summaries.iter().cloned()).collect()
            }
        }
    }
}
