//! Stressors measured while running. Tests share one lock so their loads
//! never overlap.

use std::sync::Mutex;
use std::thread::sleep;
use std::time::{Duration, Instant};

use infersentry::host::{host_cpu_utilization, process_rss_bytes};
use infersentry::stressors::{start, AchievedIntensity, StressConfig, StressorSpec, MIB};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn config(dir: &std::path::Path) -> StressConfig {
    StressConfig {
        scratch_dir: dir.to_path_buf(),
        ..StressConfig::default()
    }
}

fn busy_fraction(pct: f64) -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let mut h = start(&StressorSpec::Cpu { workers: Some(1), utilization_pct: pct }, &config(dir.path())).unwrap();
    sleep(Duration::from_millis(1500));
    let report = h.report();
    h.stop();
    assert!(report.running);
    match report.achieved {
        AchievedIntensity::Cpu { busy_fraction, workers, .. } => {
            assert_eq!(workers, 1);
            busy_fraction
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn cpu_duty_cycle_tracks_target() {
    let _g = serial();
    for pct in [0.0, 50.0, 100.0] {
        let got = busy_fraction(pct);
        assert!((got - pct / 100.0).abs() <= 0.15, "target {pct}%: busy fraction {got}");
    }
}

#[test]
fn host_load_returns_to_idle_after_stop() {
    let _g = serial();
    let idle = host_cpu_utilization(Duration::from_millis(500)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut h = start(&StressorSpec::Cpu { workers: None, utilization_pct: 100.0 }, &config(dir.path())).unwrap();
    sleep(Duration::from_millis(500));
    let loaded = host_cpu_utilization(Duration::from_millis(500)).unwrap();
    let t0 = Instant::now();
    h.stop();
    let after = host_cpu_utilization(Duration::from_millis(500)).unwrap();
    assert!(t0.elapsed() < Duration::from_secs(2));
    assert!(loaded > idle, "loaded {loaded} vs idle {idle}");
    assert!((after - idle).abs() <= 0.10, "after {after} vs idle {idle}");
}

#[test]
fn memory_is_resident_while_running_and_released_after() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let before = process_rss_bytes().unwrap();
    let mut h = start(&StressorSpec::Memory { megabytes: 96 }, &config(dir.path())).unwrap();
    sleep(Duration::from_millis(300));
    let during = process_rss_bytes().unwrap();
    let report = h.report();
    h.stop();
    let after = process_rss_bytes().unwrap();
    assert!(during >= before + 90 * MIB, "rss {before} -> {during}");
    assert!(after + 80 * MIB <= during, "rss after stop {after}, during {during}");
    match report.achieved {
        AchievedIntensity::Memory { requested_mb, resident_mb, passes } => {
            assert_eq!(requested_mb, 96);
            assert!(resident_mb >= 96);
            assert!(passes >= 1);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn disk_rate_paced_and_scratch_removed() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let scratch = dir.path().join("scratch");
    let mut h = start(&StressorSpec::Disk { rate_mbps: 8.0, dir: None }, &config(&scratch)).unwrap();
    sleep(Duration::from_millis(1500));
    let report = h.report();
    assert_eq!(std::fs::read_dir(&scratch).unwrap().count(), 1);
    h.stop();
    match report.achieved {
        AchievedIntensity::Disk { achieved_mbps, bytes_written, .. } => {
            assert!((achieved_mbps - 8.0).abs() <= 2.0, "achieved {achieved_mbps} MiB/s");
            assert!(bytes_written > 0);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(!scratch.exists(), "scratch directory left behind");
}

#[test]
fn network_flood_reaches_sink() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let spec = StressorSpec::Network { datagrams_per_s: 2000.0, payload_bytes: 512 };
    let mut h = start(&spec, &config(dir.path())).unwrap();
    sleep(Duration::from_millis(1000));
    let report = h.report();
    h.stop();
    match report.achieved {
        AchievedIntensity::Network { sent, received, achieved_pps, .. } => {
            assert!((achieved_pps - 2000.0).abs() <= 400.0, "achieved {achieved_pps}/s");
            assert!(received as f64 >= 0.9 * sent as f64, "sent {sent}, received {received}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn command_stressor_killed_at_stop() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let spec = StressorSpec::Command { command: vec!["sleep".into(), "30".into()] };
    let mut h = start(&spec, &config(dir.path())).unwrap();
    assert!(h.is_running());
    let pid = match h.achieved() {
        AchievedIntensity::Command { pid } => pid,
        other => panic!("unexpected {other:?}"),
    };
    assert!(std::path::Path::new(&format!("/proc/{pid}")).exists());
    h.stop();
    assert!(!std::path::Path::new(&format!("/proc/{pid}")).exists());
    assert!(!h.is_running());
}

#[test]
fn exited_command_reports_not_running() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut h = start(&StressorSpec::Command { command: vec!["true".into()] }, &config(dir.path())).unwrap();
    sleep(Duration::from_millis(200));
    assert!(!h.is_running());
}
