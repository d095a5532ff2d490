use std::hint::black_box;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{AchievedIntensity, StressorError, StressorHandle, MIB};

const PAGE: usize = 4096;
/// Pages touched between stop-flag checks.
const CHECK_EVERY: usize = 4096;

/// Allocates and touches `megabytes` MiB, then walks the region touching one
/// byte per 4 KiB page until stopped. The safety cap is enforced by
/// [`super::start`]; calling this directly bypasses it.
pub fn start_memory_stress(megabytes: u64) -> Result<StressorHandle, StressorError> {
    let bytes = megabytes
        .checked_mul(super::MIB)
        .and_then(|b| usize::try_from(b).ok())
        .ok_or(StressorError::Allocation(megabytes))?;
    let passes = Arc::new(AtomicU64::new(0));
    let probe_passes = Arc::clone(&passes);
    let mut handle = StressorHandle::new(
        format!("memory {megabytes} MiB"),
        Box::new(move |_| AchievedIntensity::Memory {
            requested_mb: megabytes,
            resident_mb: bytes as u64 / MIB,
            passes: probe_passes.load(Ordering::Relaxed),
        }),
    );
    if bytes == 0 {
        return Ok(handle);
    }

    let mut region: Vec<u8> = Vec::new();
    region
        .try_reserve_exact(bytes)
        .map_err(|_| StressorError::Allocation(megabytes))?;
    // Writing every byte makes the whole region resident before the walk starts.
    region.resize(bytes, 1);

    let stop = Arc::clone(&handle.stop);
    let spawned = handle.spawn_worker("stress-memory", move || {
        let mut region = region;
        let pages = region.len() / PAGE;
        'walk: loop {
            for chunk_start in (0..pages).step_by(CHECK_EVERY) {
                if stop.load(Ordering::Relaxed) {
                    break 'walk;
                }
                let end = (chunk_start + CHECK_EVERY).min(pages);
                for p in chunk_start..end {
                    let b = &mut region[p * PAGE];
                    *b = black_box(b.wrapping_add(1));
                }
            }
            passes.fetch_add(1, Ordering::Relaxed);
        }
        drop(region);
    });
    spawned.map(|_| handle)
}
