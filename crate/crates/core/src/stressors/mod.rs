//! Background resource contention: CPU duty cycle, memory touch loop, paced
//! disk writes, loopback datagram flood, and an optional external command.
//!
//! Stressors run on their own threads (or child process) and never touch
//! measurement data. [`orchestrate`] brackets a measurement body with
//! start/settle/stop and always stops what it started.

mod command;
mod cpu;
mod disk;
mod memory;
mod network;

use std::path::PathBuf;
use std::process::Child;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use command::start_command_stress;
pub use cpu::start_cpu_stress;
pub use disk::start_disk_stress;
pub use memory::start_memory_stress;
pub use network::{start_network_stress, MAX_UDP_PAYLOAD};

pub const DEFAULT_SCRATCH_DIR: &str = ".infersentry-scratch";
pub const SCRATCH_ENV: &str = "INFERSENTRY_SCRATCH";
pub const DEFAULT_SETTLE_MS: u64 = 2000;
/// Duty-cycle period of the CPU stressor.
pub const CPU_PERIOD: Duration = Duration::from_millis(10);
pub const MIB: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum StressorError {
    #[error("invalid stressor spec: {0}")]
    InvalidSpec(String),
    #[error("memory request of {requested_mb} MiB exceeds the safety cap of {cap_mb} MiB")]
    OverMemoryCap { requested_mb: u64, cap_mb: u64 },
    #[error("failed to allocate {0} MiB")]
    Allocation(u64),
    #[error("failed to start {what}: {source}")]
    Startup {
        what: String,
        #[source]
        source: std::io::Error,
    },
}

/// One background workload. Duration is governed by whoever holds the handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StressorSpec {
    Cpu {
        /// Defaults to one worker per logical CPU.
        #[serde(default)]
        workers: Option<usize>,
        utilization_pct: f64,
    },
    Memory {
        megabytes: u64,
    },
    Disk {
        rate_mbps: f64,
        /// Directory for the scratch file; defaults to the configured scratch directory.
        #[serde(default)]
        dir: Option<PathBuf>,
    },
    Network {
        datagrams_per_s: f64,
        #[serde(default = "default_payload")]
        payload_bytes: usize,
    },
    /// Arbitrary external load generator (e.g. a GPU co-tenant), killed at stop.
    Command {
        command: Vec<String>,
    },
}

fn default_payload() -> usize {
    1024
}

impl StressorSpec {
    pub fn validate(&self) -> Result<(), StressorError> {
        let bad = |m: String| Err(StressorError::InvalidSpec(m));
        match self {
            StressorSpec::Cpu {
                workers,
                utilization_pct,
            } => {
                if *workers == Some(0) {
                    return bad("cpu workers must be >= 1".into());
                }
                if !(0.0..=100.0).contains(utilization_pct) {
                    return bad(format!("cpu utilization {utilization_pct} outside [0, 100]"));
                }
            }
            StressorSpec::Memory { .. } => {}
            StressorSpec::Disk { rate_mbps, .. } => {
                if !(rate_mbps.is_finite() && *rate_mbps >= 0.0) {
                    return bad(format!("disk rate {rate_mbps} must be >= 0"));
                }
            }
            StressorSpec::Network {
                datagrams_per_s,
                payload_bytes,
            } => {
                if !(datagrams_per_s.is_finite() && *datagrams_per_s >= 0.0) {
                    return bad(format!("datagram rate {datagrams_per_s} must be >= 0"));
                }
                if *payload_bytes > MAX_UDP_PAYLOAD {
                    return bad(format!(
                        "payload {payload_bytes} B exceeds the {MAX_UDP_PAYLOAD} B datagram limit"
                    ));
                }
            }
            StressorSpec::Command { command } => {
                if command.is_empty() {
                    return bad("stressor command is empty".into());
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            StressorSpec::Cpu {
                workers,
                utilization_pct,
            } => match workers {
                Some(w) => format!("cpu {utilization_pct}% x{w}"),
                None => format!("cpu {utilization_pct}%"),
            },
            StressorSpec::Memory { megabytes } => format!("memory {megabytes} MiB"),
            StressorSpec::Disk { rate_mbps, .. } => format!("disk {rate_mbps} MiB/s"),
            StressorSpec::Network {
                datagrams_per_s,
                payload_bytes,
            } => format!("network {datagrams_per_s}/s x {payload_bytes} B"),
            StressorSpec::Command { command } => format!("command {}", command.join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressConfig {
    pub scratch_dir: PathBuf,
    /// Largest memory stressor allowed, as a fraction of physical RAM.
    pub memory_cap_fraction: f64,
    pub allow_over_cap: bool,
}

impl Default for StressConfig {
    fn default() -> Self {
        Self {
            scratch_dir: PathBuf::from(DEFAULT_SCRATCH_DIR),
            memory_cap_fraction: 0.5,
            allow_over_cap: false,
        }
    }
}

impl StressConfig {
    /// Default config with the scratch directory taken from `INFERSENTRY_SCRATCH` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Some(dir) = std::env::var_os(SCRATCH_ENV) {
            cfg.scratch_dir = PathBuf::from(dir);
        }
        cfg
    }

    pub fn memory_cap_bytes(&self) -> Option<u64> {
        if self.allow_over_cap {
            return None;
        }
        crate::host::physical_memory_bytes()
            .ok()
            .map(|b| (b as f64 * self.memory_cap_fraction) as u64)
    }
}

/// Self-measured intensity of a running stressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AchievedIntensity {
    Cpu {
        workers: usize,
        requested_pct: f64,
        /// Worker CPU time over wall time since start, averaged over workers.
        busy_fraction: f64,
    },
    Memory {
        requested_mb: u64,
        resident_mb: u64,
        passes: u64,
    },
    Disk {
        requested_mbps: f64,
        achieved_mbps: f64,
        bytes_written: u64,
    },
    Network {
        requested_pps: f64,
        payload_bytes: usize,
        sent: u64,
        received: u64,
        achieved_pps: f64,
    },
    Command {
        pid: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressorReport {
    pub label: String,
    pub running: bool,
    pub failure: Option<String>,
    pub elapsed_ms: u64,
    pub achieved: AchievedIntensity,
}

type Probe = Box<dyn Fn(Duration) -> AchievedIntensity + Send>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// A running stressor. Stops itself when dropped.
pub struct StressorHandle {
    id: u64,
    label: String,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    probe: Probe,
    failure: Arc<Mutex<Option<String>>>,
    child: Option<Child>,
    scratch_file: Option<PathBuf>,
    started: Instant,
    stopped: bool,
}

impl StressorHandle {
    fn new(label: String, probe: Probe) -> Self {
        Self {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            label,
            stop: Arc::new(AtomicBool::new(false)),
            threads: Vec::new(),
            probe,
            failure: Arc::new(Mutex::new(None)),
            child: None,
            scratch_file: None,
            started: Instant::now(),
            stopped: false,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn failure(&self) -> Option<String> {
        self.failure.lock().unwrap().clone()
    }

    pub fn is_running(&mut self) -> bool {
        if self.stopped || self.failure().is_some() {
            return false;
        }
        if let Some(child) = &mut self.child {
            return matches!(child.try_wait(), Ok(None));
        }
        self.threads.iter().all(|t| !t.is_finished())
    }

    pub fn achieved(&self) -> AchievedIntensity {
        (self.probe)(self.started.elapsed())
    }

    pub fn report(&mut self) -> StressorReport {
        StressorReport {
            label: self.label.clone(),
            running: self.is_running(),
            failure: self.failure(),
            elapsed_ms: self.started.elapsed().as_millis() as u64,
            achieved: self.achieved(),
        }
    }

    /// Signals every worker, joins them, kills any child and deletes the
    /// scratch file. Idempotent.
    pub fn stop(&mut self) {
        if self.stopped {
            return;
        }
        self.stopped = true;
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
        if let Some(path) = self.scratch_file.take() {
            let _ = std::fs::remove_file(&path);
            if let Some(dir) = path.parent() {
                // Only succeeds once the directory is empty.
                let _ = std::fs::remove_dir(dir);
            }
        }
    }

    fn spawn_worker(
        &mut self,
        name: &str,
        f: impl FnOnce() + Send + 'static,
    ) -> Result<(), StressorError> {
        let t = thread::Builder::new()
            .name(name.to_string())
            .spawn(f)
            .map_err(|e| StressorError::Startup {
                what: name.to_string(),
                source: e,
            })?;
        self.threads.push(t);
        Ok(())
    }

    fn fail_flag(&self) -> Arc<Mutex<Option<String>>> {
        Arc::clone(&self.failure)
    }
}

impl Drop for StressorHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

impl std::fmt::Debug for StressorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StressorHandle")
            .field("id", &self.id)
            .field("label", &self.label)
            .field("stopped", &self.stopped)
            .finish()
    }
}

/// Starts one stressor from its spec.
pub fn start(spec: &StressorSpec, config: &StressConfig) -> Result<StressorHandle, StressorError> {
    spec.validate()?;
    match spec {
        StressorSpec::Cpu {
            workers,
            utilization_pct,
        } => {
            let workers = workers.unwrap_or_else(|| {
                thread::available_parallelism().map_or(1, |n| n.get())
            });
            start_cpu_stress(workers, *utilization_pct)
        }
        StressorSpec::Memory { megabytes } => {
            if let Some(cap) = config.memory_cap_bytes() {
                if megabytes * MIB > cap {
                    return Err(StressorError::OverMemoryCap {
                        requested_mb: *megabytes,
                        cap_mb: cap / MIB,
                    });
                }
            }
            start_memory_stress(*megabytes)
        }
        StressorSpec::Disk { rate_mbps, dir } => {
            let dir = dir.clone().unwrap_or_else(|| config.scratch_dir.clone());
            start_disk_stress(&dir, *rate_mbps)
        }
        StressorSpec::Network {
            datagrams_per_s,
            payload_bytes,
        } => start_network_stress(*datagrams_per_s, *payload_bytes),
        StressorSpec::Command { command } => start_command_stress(command),
    }
}

/// The stressors live during a measurement body.
pub struct ActiveStressors<'a> {
    handles: &'a mut [StressorHandle],
}

impl ActiveStressors<'_> {
    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn all_running(&mut self) -> bool {
        self.handles.iter_mut().all(StressorHandle::is_running)
    }

    pub fn reports(&mut self) -> Vec<StressorReport> {
        self.handles.iter_mut().map(StressorHandle::report).collect()
    }
}

#[derive(Debug)]
pub struct Orchestrated<T> {
    pub value: T,
    /// Stressor reports taken right after the body finished, before stopping.
    pub reports: Vec<StressorReport>,
}

#[derive(Debug, Error)]
pub enum OrchestrateError<E> {
    #[error("stressor startup failed: {0}")]
    Startup(#[source] StressorError),
    #[error("measurement body failed: {source}")]
    Body {
        source: E,
        reports: Vec<StressorReport>,
    },
}

/// Starts every stressor, waits `settle`, runs `body`, then stops all
/// stressors whether or not the body succeeded. A startup failure stops the
/// ones already running and the body never runs.
pub fn orchestrate<T, E>(
    specs: &[StressorSpec],
    settle: Duration,
    config: &StressConfig,
    body: impl FnOnce(&mut ActiveStressors<'_>) -> Result<T, E>,
) -> Result<Orchestrated<T>, OrchestrateError<E>> {
    for spec in specs {
        spec.validate().map_err(OrchestrateError::Startup)?;
    }
    let mut handles = Vec::with_capacity(specs.len());
    for spec in specs {
        match start(spec, config) {
            Ok(h) => handles.push(h),
            Err(e) => {
                handles.iter_mut().for_each(StressorHandle::stop);
                return Err(OrchestrateError::Startup(e));
            }
        }
    }
    if !specs.is_empty() && !settle.is_zero() {
        thread::sleep(settle);
    }
    let mut active = ActiveStressors {
        handles: &mut handles,
    };
    let result = body(&mut active);
    let reports = active.reports();
    handles.iter_mut().for_each(StressorHandle::stop);
    match result {
        Ok(value) => Ok(Orchestrated { value, reports }),
        Err(source) => Err(OrchestrateError::Body { source, reports }),
    }
}
