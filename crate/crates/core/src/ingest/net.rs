//! Datagram replay and capture of the orientation protocol.

use std::collections::BTreeMap;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assemble::{assemble, tick_time_us, CaptureQueue, CaptureStats};
use super::packet::{decode_packet, encode_packet, PACKET_LEN};
use super::{IngestError, Recording, SensorSample, DEFAULT_STALENESS_MS};

pub const DEFAULT_PORT: u16 = 9000;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub speed: f64,
    /// Fraction of packets withheld, for loss experiments. The first frame is always sent.
    pub loss_fraction: f64,
    pub seed: u64,
    pub base_timestamp_us: u32,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            speed: 1.0,
            loss_fraction: 0.0,
            seed: 0,
            base_timestamp_us: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayStats {
    pub sent: u64,
    /// (sensor id, tick index) of every withheld packet.
    pub dropped: Vec<(u8, u64)>,
    pub elapsed: Duration,
}

fn resolve(addr: &str) -> Result<SocketAddr, IngestError> {
    addr.to_socket_addrs()
        .map_err(IngestError::Transport)?
        .next()
        .ok_or_else(|| IngestError::InvalidArgument(format!("address {addr:?} resolves to nothing")))
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

/// Streams `rec` to `dest`, one packet per sensor per frame, paced at
/// `rate_hz × speed`. Packet timestamps follow the recording's own clock, so
/// a capture at any speed reconstructs the same ticks.
pub fn replay(rec: &Recording, dest: &str, opts: &ReplayOptions) -> Result<ReplayStats, IngestError> {
    if !(opts.speed > 0.0 && opts.speed.is_finite()) {
        return Err(IngestError::InvalidArgument(format!("speed must be positive, got {}", opts.speed)));
    }
    if !(0.0..1.0).contains(&opts.loss_fraction) {
        return Err(IngestError::InvalidArgument(format!("loss fraction {}", opts.loss_fraction)));
    }
    rec.validate()?;
    let target = resolve(dest)?;
    let bind: SocketAddr = if target.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal address");
    let socket = UdpSocket::bind(bind).map_err(IngestError::Transport)?;
    socket.connect(target).map_err(IngestError::Transport)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = ReplayStats::default();
    let period = 1.0 / (rec.rate_hz * opts.speed);
    let start = Instant::now();
    let first_tick = rec.frames.first().map_or(0, |f| f.tick_index);
    for frame in &rec.frames {
        let k = frame.tick_index - first_tick;
        sleep_until(start + Duration::from_secs_f64(k as f64 * period));
        let ts = opts.base_timestamp_us.wrapping_add(tick_time_us(k, rec.rate_hz) as u32);
        for (id, segment) in &rec.segment_map {
            if k > 0 && opts.loss_fraction > 0.0 && rng.random::<f64>() < opts.loss_fraction {
                stats.dropped.push((*id, k));
                continue;
            }
            let packet = encode_packet(&SensorSample {
                sensor_id: *id,
                seq: k as u16,
                timestamp_us: ts,
                q: frame.orientations[segment],
                status: 0,
            });
            socket.send(&packet).map_err(IngestError::Transport)?;
            stats.sent += 1;
        }
    }
    sleep_until(start + Duration::from_secs_f64(rec.frames.len() as f64 * period));
    stats.elapsed = start.elapsed();
    info!("replayed {} packets in {:.3} s", stats.sent, stats.elapsed.as_secs_f64());
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct RecordOptions {
    pub rate_hz: f64,
    pub segment_map: BTreeMap<u8, String>,
    pub staleness_ms: f64,
    /// Capture ends once packets stop arriving for this long.
    pub idle_timeout: Duration,
    /// Give up if nothing arrives at all within this window.
    pub start_timeout: Duration,
    pub max_duration: Option<Duration>,
}

impl RecordOptions {
    pub fn new(rate_hz: f64, segment_map: BTreeMap<u8, String>) -> Self {
        RecordOptions {
            rate_hz,
            segment_map,
            staleness_ms: DEFAULT_STALENESS_MS,
            idle_timeout: Duration::from_millis(1000),
            start_timeout: Duration::from_secs(30),
            max_duration: None,
        }
    }
}

/// Captures datagrams on `socket` until the stream goes idle, then assembles
/// them into a recording.
///
/// A reader thread feeds a bounded [`CaptureQueue`]; this thread drains and
/// decodes it.
pub fn record(socket: UdpSocket, opts: &RecordOptions) -> Result<(Recording, CaptureStats), IngestError> {
    if opts.segment_map.is_empty() {
        return Err(IngestError::InvalidArgument("empty sensor map".into()));
    }
    let queue = Arc::new(CaptureQueue::<Vec<u8>>::for_rate(opts.segment_map.len(), opts.rate_hz));
    let done = Arc::new(AtomicBool::new(false));
    socket
        .set_read_timeout(Some(Duration::from_millis(20)))
        .map_err(IngestError::Transport)?;

    let reader = {
        let queue = Arc::clone(&queue);
        let done = Arc::clone(&done);
        let (idle, start_timeout, max) = (opts.idle_timeout, opts.start_timeout, opts.max_duration);
        thread::spawn(move || -> Result<u64, std::io::Error> {
            let start = Instant::now();
            let mut last_rx: Option<Instant> = None;
            let mut datagrams = 0u64;
            let mut buf = [0u8; 2048];
            loop {
                match socket.recv(&mut buf) {
                    Ok(n) => {
                        datagrams += 1;
                        last_rx = Some(Instant::now());
                        queue.push(buf[..n].to_vec());
                    }
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(e) => {
                        done.store(true, Ordering::SeqCst);
                        return Err(e);
                    }
                }
                let now = Instant::now();
                let finished = match last_rx {
                    Some(t) => now - t > idle,
                    None => now - start > start_timeout,
                } || max.is_some_and(|m| now - start > m);
                if finished {
                    done.store(true, Ordering::SeqCst);
                    return Ok(datagrams);
                }
            }
        })
    };

    let mut stats = CaptureStats::default();
    let mut packets = Vec::new();
    loop {
        match queue.pop_timeout(Duration::from_millis(20)) {
            Some(bytes) => {
                for chunk in bytes.chunks(PACKET_LEN) {
                    match decode_packet(chunk) {
                        Ok(p) => packets.push(p),
                        Err(e) => {
                            debug!("dropping datagram: {e}");
                            stats.decode_errors += 1;
                        }
                    }
                }
            }
            None if done.load(Ordering::SeqCst) => break,
            None => {}
        }
    }
    // drain anything pushed between the last pop and the stop flag
    while let Some(bytes) = queue.pop_timeout(Duration::ZERO) {
        for chunk in bytes.chunks(PACKET_LEN) {
            match decode_packet(chunk) {
                Ok(p) => packets.push(p),
                Err(_) => stats.decode_errors += 1,
            }
        }
    }
    stats.datagrams = reader
        .join()
        .expect("capture reader panicked")
        .map_err(IngestError::Transport)?;
    stats.overflow_dropped = queue.overflow_dropped();

    let assembled = assemble(&packets, opts.rate_hz, &opts.segment_map, opts.staleness_ms)?;
    stats.out_of_order_dropped = assembled.out_of_order_dropped;
    info!(
        "captured {} packets into {} frames ({} decode errors, {} overflow drops)",
        packets.len(),
        assembled.frames.len(),
        stats.decode_errors,
        stats.overflow_dropped
    );
    Ok((
        Recording {
            rate_hz: opts.rate_hz,
            segment_map: opts.segment_map.clone(),
            calibration: None,
            frames: assembled.frames,
        },
        stats,
    ))
}
