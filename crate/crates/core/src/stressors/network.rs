use std::io::ErrorKind;
use std::net::{Ipv4Addr, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{AchievedIntensity, StressorError, StressorHandle};

/// Largest UDP payload over IPv4.
pub const MAX_UDP_PAYLOAD: usize = 65_507;
const TICK: Duration = Duration::from_millis(1);

/// Paced datagram flood from one loopback socket to a sink socket owned by
/// the same stressor. Nothing binds outside 127.0.0.1.
pub fn start_network_stress(
    datagrams_per_s: f64,
    payload_bytes: usize,
) -> Result<StressorHandle, StressorError> {
    if payload_bytes > MAX_UDP_PAYLOAD {
        return Err(StressorError::InvalidSpec(format!(
            "payload {payload_bytes} B exceeds the {MAX_UDP_PAYLOAD} B datagram limit"
        )));
    }
    if !(datagrams_per_s.is_finite() && datagrams_per_s >= 0.0) {
        return Err(StressorError::InvalidSpec(format!(
            "datagram rate {datagrams_per_s} must be >= 0"
        )));
    }
    let startup = |source| StressorError::Startup {
        what: "loopback network stressor".into(),
        source,
    };
    let sink = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).map_err(startup)?;
    sink.set_read_timeout(Some(Duration::from_millis(50)))
        .map_err(startup)?;
    let sender = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).map_err(startup)?;
    sender
        .connect(sink.local_addr().map_err(startup)?)
        .map_err(startup)?;

    let sent = Arc::new(AtomicU64::new(0));
    let received = Arc::new(AtomicU64::new(0));
    let (probe_sent, probe_received) = (Arc::clone(&sent), Arc::clone(&received));
    let mut handle = StressorHandle::new(
        format!("network {datagrams_per_s}/s x {payload_bytes} B"),
        Box::new(move |elapsed| {
            let received = probe_received.load(Ordering::Relaxed);
            AchievedIntensity::Network {
                requested_pps: datagrams_per_s,
                payload_bytes,
                sent: probe_sent.load(Ordering::Relaxed),
                received,
                achieved_pps: received as f64 / elapsed.as_secs_f64().max(1e-9),
            }
        }),
    );

    let stop = Arc::clone(&handle.stop);
    let failure = handle.fail_flag();
    handle.spawn_worker("stress-net-sink", move || {
        let mut buf = vec![0u8; MAX_UDP_PAYLOAD + 1];
        while !stop.load(Ordering::Relaxed) {
            match sink.recv(&mut buf) {
                Ok(_) => {
                    received.fetch_add(1, Ordering::Relaxed);
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) => {
                    *failure.lock().unwrap() = Some(format!("sink receive failed: {e}"));
                    break;
                }
            }
        }
    })?;

    let stop = Arc::clone(&handle.stop);
    handle.spawn_worker("stress-net-send", move || {
        let payload = vec![0x5Au8; payload_bytes];
        let start = Instant::now();
        while !stop.load(Ordering::Relaxed) {
            let due = (datagrams_per_s * start.elapsed().as_secs_f64()) as u64;
            while sent.load(Ordering::Relaxed) < due && !stop.load(Ordering::Relaxed) {
                // Transient ENOBUFS under load is part of the contention, not a failure.
                let _ = sender.send(&payload);
                sent.fetch_add(1, Ordering::Relaxed);
            }
            thread::sleep(TICK);
        }
    })?;
    Ok(handle)
}
