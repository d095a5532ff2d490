use std::hint::black_box;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use super::{AchievedIntensity, StressorError, StressorHandle, CPU_PERIOD};
use crate::host::thread_cpu_time;

/// Spawns `workers` threads, each spinning for `utilization_pct` of every
/// 10 ms period and sleeping for the remainder.
pub fn start_cpu_stress(workers: usize, utilization_pct: f64) -> Result<StressorHandle, StressorError> {
    if workers == 0 {
        return Err(StressorError::InvalidSpec("cpu workers must be >= 1".into()));
    }
    if !(0.0..=100.0).contains(&utilization_pct) {
        return Err(StressorError::InvalidSpec(format!(
            "cpu utilization {utilization_pct} outside [0, 100]"
        )));
    }
    let cpu_ns: Arc<Vec<AtomicU64>> = Arc::new((0..workers).map(|_| AtomicU64::new(0)).collect());
    let probe_ns = Arc::clone(&cpu_ns);
    let mut handle = StressorHandle::new(
        format!("cpu {utilization_pct}% x{workers}"),
        Box::new(move |elapsed| {
            let wall = elapsed.as_nanos().max(1) as f64;
            let total: f64 = probe_ns
                .iter()
                .map(|c| c.load(Ordering::Relaxed) as f64 / wall)
                .sum();
            AchievedIntensity::Cpu {
                workers,
                requested_pct: utilization_pct,
                busy_fraction: (total / workers as f64).min(1.0),
            }
        }),
    );
    let busy = CPU_PERIOD.mul_f64(utilization_pct / 100.0);
    for w in 0..workers {
        let stop = Arc::clone(&handle.stop);
        let counters = Arc::clone(&cpu_ns);
        let spawned = handle.spawn_worker(&format!("stress-cpu-{w}"), move || {
            let base = thread_cpu_time();
            let mut acc = 0u64;
            while !stop.load(Ordering::Relaxed) {
                let cycle = Instant::now();
                while cycle.elapsed() < busy {
                    for i in 0..256u64 {
                        acc = black_box(acc.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(i));
                    }
                }
                counters[w].store(
                    (thread_cpu_time().saturating_sub(base)).as_nanos() as u64,
                    Ordering::Relaxed,
                );
                let spent = cycle.elapsed();
                if spent < CPU_PERIOD {
                    thread::sleep(CPU_PERIOD - spent);
                } else if busy < CPU_PERIOD {
                    // Preempted past the period end; yield once to keep the duty cycle honest.
                    thread::yield_now();
                }
            }
            black_box(acc);
        });
        if let Err(e) = spawned {
            handle.stop();
            return Err(e);
        }
    }
    Ok(handle)
}
