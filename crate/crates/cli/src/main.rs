use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use infersentry::metrics::Thresholds;
use infersentry::protocol::{
    capture_baseline, load_bundle, load_plan, records_file_name, resummarize, run_protocol, PlanError,
    ReferenceProfile, ResultsBundle, RunError, RunOptions,
};
use infersentry::reporting::{
    build_cdf, build_scatter, render_summary_table, render_verdicts, scatter_csv, ReplayFixture, TableFormat,
};
use infersentry::stressors::{orchestrate, StressConfig, StressorSpec, MAX_UDP_PAYLOAD};

/// Jointly verifies output stability (STER) and tail latency (P99) of an
/// inference backend under controlled resource contention.
#[derive(Debug, Parser)]
#[command(name = "infersentry", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Capture the zero-load reference profile for a plan.
    Calibrate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every condition of a plan and write a results bundle.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Reuse an existing reference profile instead of capturing one.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pin the measurement thread to this logical CPU.
        #[arg(long)]
        pin_core: Option<usize>,
        #[command(flatten)]
        stress: StressFlags,
    },
    /// Evaluate the joint acceptance condition over a results bundle.
    Verify {
        #[arg(long)]
        results: PathBuf,
        /// Cycle budget in milliseconds.
        #[arg(long, default_value_t = 100.0)]
        tn_ms: f64,
        #[arg(long, default_value_t = 0.0)]
        ster_max: f64,
        #[arg(long, default_value_t = 0.05)]
        tstar: f64,
        /// Also write the verdicts as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables, CDF series or scatter data from results bundles.
    Report {
        /// Results directory or summary.json; repeat for scatter across backends.
        #[arg(long, required_unless_present = "replay")]
        results: Vec<PathBuf>,
        /// Render a bundled table fixture instead of a results bundle.
        #[arg(long, conflicts_with = "results")]
        replay: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        /// Output file (directory for `cdf`); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Path label per --results, for scatter output.
        #[arg(long)]
        label: Vec<String>,
    },
    /// Run stressors on their own for a fixed duration.
    Stress {
        /// Target utilization percent, optionally `:workers`.
        #[arg(long, value_parser = parse_cpu)]
        cpu: Option<(f64, Option<usize>)>,
        #[arg(long)]
        mem_mb: Option<u64>,
        #[arg(long)]
        disk_mbps: Option<f64>,
        #[arg(long)]
        net_pps: Option<f64>,
        #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u32).range(0..=MAX_UDP_PAYLOAD as i64))]
        net_payload: u32,
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        #[command(flatten)]
        stress: StressFlags,
    },
}

#[derive(Debug, clap::Args)]
struct StressFlags {
    /// Scratch directory for disk stress (overrides INFERSENTRY_SCRATCH).
    #[arg(long)]
    scratch: Option<PathBuf>,
    /// Permit memory stressors above half of physical RAM.
    #[arg(long)]
    allow_over_cap: bool,
}

impl StressFlags {
    fn config(&self) -> StressConfig {
        let mut cfg = StressConfig::from_env();
        if let Some(dir) = &self.scratch {
            cfg.scratch_dir = dir.clone();
        }
        cfg.allow_over_cap = self.allow_over_cap;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
    Json,
    Cdf,
    Scatter,
}

fn parse_cpu(s: &str) -> Result<(f64, Option<usize>), String> {
    let (pct, workers) = match s.split_once(':') {
        Some((p, w)) => (p, Some(w)),
        None => (s, None),
    };
    let pct: f64 = pct.parse().map_err(|_| format!("bad utilization `{pct}`"))?;
    if !(0.0..=100.0).contains(&pct) {
        return Err(format!("utilization {pct} outside [0, 100]"));
    }
    let workers = match workers {
        Some(w) => match w.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(format!("bad worker count `{w}`")),
        },
        None => None,
    };
    Ok((pct, workers))
}

/// Usage problems exit 2, runtime failures exit 3.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| runtime(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_profile(path: &Path) -> Result<ReferenceProfile, Failure> {
    ReferenceProfile::load(path).map_err(|e| Failure::Usage(format!("profile {}: {e}", path.display())))
}

fn load_results(path: &Path) -> Result<ResultsBundle, Failure> {
    load_bundle(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn calibrate(plan: &Path, out: &Path) -> Result<u8, Failure> {
    let plan = load_plan(plan)?;
    let profile = capture_baseline(&plan).map_err(runtime)?;
    profile
        .save(out)
        .map_err(|e| runtime(format!("writing {}: {e}", out.display())))?;
    println!(
        "reference profile for {} inputs ({} passes, {}) written to {}",
        profile.vectors.len(),
        profile.passes,
        profile.backend.label(),
        out.display()
    );
    Ok(0)
}

fn run(plan: &Path, profile: Option<&Path>, out: &Path, pin_core: Option<usize>, stress: &StressFlags) -> Result<u8, Failure> {
    let plan = load_plan(plan)?;
    let profile = profile.map(load_profile).transpose()?;
    let options = RunOptions {
        stress: stress.config(),
        pin_core,
    };
    let result = run_protocol(&plan, out, profile, &options).map_err(|e| match e {
        RunError::ProfileMismatch(_) => Failure::Usage(e.to_string()),
        other => runtime(other),
    })?;
    let summaries: Vec<_> = result.conditions.iter().map(|c| c.summary.clone()).collect();
    print!("{}", render_summary_table(&summaries, TableFormat::Text));
    print!("{}", render_verdicts(&summaries, &plan.thresholds).text());
    for a in &result.aborted_conditions {
        println!("{}: ABORTED {}", a.condition_id, a.reason);
    }
    println!("results written to {}", out.display());
    Ok(0)
}

fn verify(results: &Path, tn_ms: f64, ster_max: f64, tstar: f64, out: Option<&Path>) -> Result<u8, Failure> {
    let thresholds = Thresholds {
        t_star: tstar,
        ster_max,
        budget_ns: (tn_ms * 1e6).round() as u64,
    };
    thresholds.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(tn_ms.is_finite() && tn_ms > 0.0) {
        return Err(Failure::Usage(format!("--tn-ms {tn_ms} must be positive")));
    }
    let bundle = load_results(results)?;
    let entries = resummarize(&bundle, &thresholds).map_err(runtime)?;
    let summaries: Vec<_> = entries.into_iter().map(|e| e.summary).collect();
    let report = render_verdicts(&summaries, &thresholds);
    print!("{}", report.text());
    for a in &bundle.summary.aborted_conditions {
        println!("{}: ABORTED {}", a.condition_id, a.reason);
    }
    if let Some(path) = out {
        fs::write(path, report.json()).map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
    }
    let pass = report.all_pass && bundle.summary.aborted_conditions.is_empty();
    Ok(if pass { 0 } else { 1 })
}

fn report(
    results: &[PathBuf],
    replay: Option<&Path>,
    format: ReportFormat,
    out: Option<&Path>,
    labels: &[String],
) -> Result<u8, Failure> {
    if let Some(path) = replay {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let fixture = ReplayFixture::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let doc = match format {
            ReportFormat::Text => {
                let mut doc = format!("{}\n", fixture.table);
                doc.push_str(&fixture.render_text());
                doc.push_str(&render_verdicts(&fixture.summaries(), &fixture.thresholds).text());
                doc
            }
            ReportFormat::Csv => render_summary_table(&fixture.summaries(), TableFormat::Csv),
            ReportFormat::Json => render_summary_table(&fixture.summaries(), TableFormat::Json),
            ReportFormat::Cdf | ReportFormat::Scatter => {
                return Err(Failure::Usage("replay fixtures support text, csv and json only".into()))
            }
        };
        return write_output(out, &doc).map(|()| 0);
    }

    let bundles = results.iter().map(|p| load_results(p)).collect::<Result<Vec<_>, _>>()?;
    if format != ReportFormat::Scatter && bundles.len() != 1 {
        return Err(Failure::Usage("only scatter output accepts more than one --results".into()));
    }
    if !labels.is_empty() && labels.len() != bundles.len() {
        return Err(Failure::Usage("give one --label per --results".into()));
    }
    let summaries = |b: &ResultsBundle| b.summary.conditions.iter().map(|c| c.summary.clone()).collect::<Vec<_>>();
    match format {
        ReportFormat::Text | ReportFormat::Csv | ReportFormat::Json => {
            let b = &bundles[0];
            let table_format = match format {
                ReportFormat::Text => TableFormat::Text,
                ReportFormat::Csv => TableFormat::Csv,
                _ => TableFormat::Json,
            };
            let mut doc = String::new();
            if format == ReportFormat::Text {
                doc.push_str(&format!("{} ({})\n", b.summary.plan_name, b.summary.backend));
            }
            doc.push_str(&render_summary_table(&summaries(b), table_format));
            write_output(out, &doc)
        }
        ReportFormat::Cdf => {
            let b = &bundles[0];
            let dir = out.ok_or_else(|| Failure::Usage("cdf output needs --out <directory>".into()))?;
            fs::create_dir_all(dir).map_err(|e| runtime(format!("creating {}: {e}", dir.display())))?;
            for entry in &b.summary.conditions {
                let id = &entry.summary.condition_id;
                let rows = b.records.get(id).ok_or_else(|| {
                    runtime(format!("no {} in {}", records_file_name(id), b.dir.display()))
                })?;
                let kept: Vec<u64> = rows
                    .iter()
                    .filter(|r| !entry.summary.aborted_trials.contains(&r.trial))
                    .map(|r| r.latency_ns)
                    .collect();
                let series = build_cdf(id, &kept).map_err(runtime)?;
                let path = dir.join(format!("cdf-{id}.csv"));
                fs::write(&path, series.to_csv()).map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
                println!("{}", path.display());
            }
            Ok(())
        }
        ReportFormat::Scatter => {
            let paths: Vec<(String, Vec<_>)> = bundles
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let label = labels.get(i).cloned().unwrap_or_else(|| b.summary.backend.clone());
                    (label, summaries(b))
                })
                .collect();
            write_output(out, &scatter_csv(&build_scatter(&paths)))
        }
    }?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn stress(
    cpu: Option<(f64, Option<usize>)>,
    mem_mb: Option<u64>,
    disk_mbps: Option<f64>,
    net_pps: Option<f64>,
    net_payload: u32,
    duration_s: f64,
    flags: &StressFlags,
) -> Result<u8, Failure> {
    let mut specs = Vec::new();
    if let Some((utilization_pct, workers)) = cpu {
        specs.push(StressorSpec::Cpu { workers, utilization_pct });
    }
    if let Some(megabytes) = mem_mb {
        specs.push(StressorSpec::Memory { megabytes });
    }
    if let Some(rate_mbps) = disk_mbps {
        specs.push(StressorSpec::Disk { rate_mbps, dir: None });
    }
    if let Some(datagrams_per_s) = net_pps {
        specs.push(StressorSpec::Network {
            datagrams_per_s,
            payload_bytes: net_payload as usize,
        });
    }
    if specs.is_empty() {
        return Err(Failure::Usage("no stressor requested (use --cpu, --mem-mb, --disk-mbps or --net-pps)".into()));
    }
    for s in &specs {
        s.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if !(duration_s.is_finite() && duration_s >= 0.0) {
        return Err(Failure::Usage(format!("--duration-s {duration_s} must be >= 0")));
    }

    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let flag = Arc::clone(&interrupted);
        if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
            log::warn!("cannot install interrupt handler: {e}");
        }
    }
    let labels: Vec<String> = specs.iter().map(StressorSpec::label).collect();
    info!("starting {}", labels.join(", "));
    let deadline = Instant::now() + Duration::from_secs_f64(duration_s);
    let done = orchestrate(&specs, Duration::ZERO, &flags.config(), |active| {
        while Instant::now() < deadline && !interrupted.load(Ordering::SeqCst) {
            if !active.all_running() {
                return Err(active.reports());
            }
            std::thread::sleep(Duration::from_millis(100).min(deadline.saturating_duration_since(Instant::now())));
        }
        Ok(())
    });
    match done {
        Ok(o) => {
            println!("{}", serde_json::to_string_pretty(&o.reports).expect("reports serialize"));
            Ok(0)
        }
        Err(infersentry::stressors::OrchestrateError::Startup(e)) => Err(runtime(e)),
        Err(infersentry::stressors::OrchestrateError::Body { reports, .. }) => {
            println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
            Err(runtime("a stressor stopped unexpectedly"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Calibrate { plan, out } => calibrate(plan, out),
        Command::Run {
            plan,
            profile,
            out,
            pin_core,
            stress,
        } => run(plan, profile.as_deref(), out, *pin_core, stress),
        Command::Verify {
            results,
            tn_ms,
            ster_max,
            tstar,
            out,
        } => verify(results, *tn_ms, *ster_max, *tstar, out.as_deref()),
        Command::Report {
            results,
            replay,
            format,
            out,
            label,
        } => report(results, replay.as_deref(), *format, out.as_deref(), label),
        Command::Stress {
            cpu,
            mem_mb,
            disk_mbps,
            net_pps,
            net_payload,
            duration_s,
            stress: flags,
        } => stress(*cpu, *mem_mb, *disk_mbps, *net_pps, *net_payload, *duration_s, flags),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
