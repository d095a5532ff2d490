use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{AchievedIntensity, StressorError, StressorHandle, MIB};

const CHUNK: usize = 256 * 1024;
const SYNC_EVERY: u64 = 4 * MIB;
/// The scratch file wraps back to offset 0 past this size.
const MAX_FILE: u64 = 1024 * MIB;
const TICK: Duration = Duration::from_millis(5);

/// Paced sequential writes into a fresh scratch file under `dir`. The file
/// is deleted on stop.
pub fn start_disk_stress(dir: &Path, rate_mbps: f64) -> Result<StressorHandle, StressorError> {
    if !(rate_mbps.is_finite() && rate_mbps >= 0.0) {
        return Err(StressorError::InvalidSpec(format!("disk rate {rate_mbps} must be >= 0")));
    }
    let startup = |source| StressorError::Startup {
        what: format!("disk stressor in {}", dir.display()),
        source,
    };
    fs::create_dir_all(dir).map_err(startup)?;

    let written = Arc::new(AtomicU64::new(0));
    let probe_written = Arc::clone(&written);
    let mut handle = StressorHandle::new(
        format!("disk {rate_mbps} MiB/s"),
        Box::new(move |elapsed| {
            let bytes = probe_written.load(Ordering::Relaxed);
            AchievedIntensity::Disk {
                requested_mbps: rate_mbps,
                achieved_mbps: bytes as f64 / MIB as f64 / elapsed.as_secs_f64().max(1e-9),
                bytes_written: bytes,
            }
        }),
    );
    let path = dir.join(format!("disk-{}-{}.bin", std::process::id(), handle.id()));
    let file = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&path)
        .map_err(startup)?;
    handle.scratch_file = Some(path);

    let stop = Arc::clone(&handle.stop);
    let failure = handle.fail_flag();
    let spawned = handle.spawn_worker("stress-disk", move || {
        if let Err(e) = write_loop(file, rate_mbps, &stop, &written) {
            *failure.lock().unwrap() = Some(format!("disk write failed: {e}"));
        }
    });
    spawned.map(|_| handle)
}

fn write_loop(
    mut file: File,
    rate_mbps: f64,
    stop: &std::sync::atomic::AtomicBool,
    written: &AtomicU64,
) -> std::io::Result<()> {
    let chunk = vec![0xA5u8; CHUNK];
    let bytes_per_s = rate_mbps * MIB as f64;
    let start = Instant::now();
    let mut offset = 0u64;
    let mut since_sync = 0u64;
    while !stop.load(Ordering::Relaxed) {
        let due = (bytes_per_s * start.elapsed().as_secs_f64()) as u64;
        while written.load(Ordering::Relaxed) + CHUNK as u64 <= due && !stop.load(Ordering::Relaxed) {
            if offset >= MAX_FILE {
                file.seek(SeekFrom::Start(0))?;
                offset = 0;
            }
            file.write_all(&chunk)?;
            offset += CHUNK as u64;
            since_sync += CHUNK as u64;
            written.fetch_add(CHUNK as u64, Ordering::Relaxed);
            if since_sync >= SYNC_EVERY {
                file.sync_data()?;
                since_sync = 0;
            }
        }
        thread::sleep(TICK);
    }
    file.flush()
}
