//! Frame assembly: turns an unordered, lossy packet stream into uniformly
//! ticked body frames.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::rotmath::UnitQuat;

use super::{IngestError, SensorFrame, SensorSample};

pub const DEFAULT_STALENESS_MS: f64 = 200.0;

/// Window of sequence numbers treated as "older" for reorder rejection.
const REORDER_WINDOW: u16 = 64;

/// Microsecond offset of tick `k` from the recording origin.
///
/// The replayer stamps packets with the same function, so a lossless replay
/// lands every packet exactly on its tick.
pub fn tick_time_us(k: u64, rate_hz: f64) -> i64 {
    (k as f64 * 1e6 / rate_hz).round() as i64
}

/// Accepts `seq` unless it repeats or falls up to 64 steps behind `last`.
fn is_newer(seq: u16, last: u16) -> bool {
    last.wrapping_sub(seq) > REORDER_WINDOW
}

pub(crate) struct Assembly {
    pub frames: Vec<SensorFrame>,
    pub out_of_order_dropped: u64,
}

/// Assembles frames at `rate_hz` from packets in arrival order.
///
/// Tick `k` carries, per segment, the latest packet stamped at or before the
/// tick; a segment whose latest packet is older than `staleness_ms` keeps that
/// value and is listed in `stale`.
pub fn assemble_frames(
    packets: &[SensorSample],
    rate_hz: f64,
    segment_map: &BTreeMap<u8, String>,
    staleness_ms: f64,
) -> Result<Vec<SensorFrame>, IngestError> {
    assemble(packets, rate_hz, segment_map, staleness_ms).map(|a| a.frames)
}

pub(crate) fn assemble(
    packets: &[SensorSample],
    rate_hz: f64,
    segment_map: &BTreeMap<u8, String>,
    staleness_ms: f64,
) -> Result<Assembly, IngestError> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(IngestError::InvalidArgument(format!("rate {rate_hz} Hz")));
    }
    if !(staleness_ms >= 0.0) {
        return Err(IngestError::InvalidArgument(format!("staleness {staleness_ms} ms")));
    }

    // unwrap sender clocks along arrival order; consecutive deltas are < 2^31 us
    let mut last_seq: BTreeMap<u8, u16> = BTreeMap::new();
    let mut per_sensor: BTreeMap<u8, Vec<(i64, UnitQuat)>> = BTreeMap::new();
    let mut prev_ts: Option<(u32, i64)> = None;
    let mut dropped = 0u64;
    for p in packets {
        if !segment_map.contains_key(&p.sensor_id) {
            continue;
        }
        if let Some(last) = last_seq.get(&p.sensor_id) {
            if !is_newer(p.seq, *last) {
                dropped += 1;
                continue;
            }
        }
        last_seq.insert(p.sensor_id, p.seq);
        let unwrapped = match prev_ts {
            None => 0,
            Some((raw, u)) => u + p.timestamp_us.wrapping_sub(raw) as i32 as i64,
        };
        prev_ts = Some((p.timestamp_us, unwrapped));
        per_sensor.entry(p.sensor_id).or_default().push((unwrapped, p.q));
    }

    let origin = per_sensor.values().flatten().map(|(t, _)| *t).min();
    let last = per_sensor.values().flatten().map(|(t, _)| *t).max();
    let (origin, last) = match (origin, last) {
        (Some(o), Some(l)) => (o, l),
        _ => {
            let (id, seg) = segment_map.iter().next().expect("empty segment map");
            return Err(IngestError::MissingSensor {
                sensor_id: *id,
                segment: seg.clone(),
            });
        }
    };
    for list in per_sensor.values_mut() {
        list.sort_by_key(|(t, _)| *t);
    }

    let staleness_us = (staleness_ms * 1000.0).round() as i64;
    let mut cursors: BTreeMap<u8, (usize, Option<(i64, UnitQuat)>)> =
        segment_map.keys().map(|id| (*id, (0, None))).collect();
    let mut frames = Vec::new();
    let mut k = 0u64;
    loop {
        let tick = tick_time_us(k, rate_hz);
        if origin + tick > last {
            break;
        }
        let mut orientations = BTreeMap::new();
        let mut stale = BTreeSet::new();
        for (id, segment) in segment_map {
            let (pos, current) = cursors.get_mut(id).expect("cursor per mapped sensor");
            let list = per_sensor.get(id).map(Vec::as_slice).unwrap_or(&[]);
            while *pos < list.len() && list[*pos].0 - origin <= tick {
                *current = Some(list[*pos]);
                *pos += 1;
            }
            match current {
                Some((t, q)) => {
                    if tick - (*t - origin) > staleness_us {
                        stale.insert(segment.clone());
                    }
                    orientations.insert(segment.clone(), *q);
                }
                None => {
                    return Err(IngestError::MissingSensor {
                        sensor_id: *id,
                        segment: segment.clone(),
                    })
                }
            }
        }
        frames.push(SensorFrame {
            tick_index: k,
            time_s: k as f64 / rate_hz,
            orientations,
            stale,
        });
        k += 1;
    }
    Ok(Assembly {
        frames,
        out_of_order_dropped: dropped,
    })
}

/// Counters exposed by a live capture.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureStats {
    pub datagrams: u64,
    pub decode_errors: u64,
    pub overflow_dropped: u64,
    pub out_of_order_dropped: u64,
}

/// Bounded hand-off between the socket reader and the assembler.
/// When full, the oldest entry is discarded and counted.
pub struct CaptureQueue<T> {
    inner: Mutex<(VecDeque<T>, u64)>,
    ready: Condvar,
    capacity: usize,
}

impl<T> CaptureQueue<T> {
    pub fn new(capacity: usize) -> Self {
        CaptureQueue {
            inner: Mutex::new((VecDeque::with_capacity(capacity), 0)),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    /// Capacity sized for `sensors` sensors at `rate_hz`, at least four rate-seconds deep.
    pub fn for_rate(sensors: usize, rate_hz: f64) -> Self {
        Self::new((4.0 * sensors.max(1) as f64 * rate_hz).ceil() as usize)
    }

    pub fn push(&self, item: T) {
        let mut g = self.inner.lock().expect("capture queue poisoned");
        if g.0.len() == self.capacity {
            g.0.pop_front();
            g.1 += 1;
        }
        g.0.push_back(item);
        self.ready.notify_one();
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let g = self.inner.lock().expect("capture queue poisoned");
        let (mut g, _) = self
            .ready
            .wait_timeout_while(g, timeout, |(q, _)| q.is_empty())
            .expect("capture queue poisoned");
        g.0.pop_front()
    }

    pub fn overflow_dropped(&self) -> u64 {
        self.inner.lock().expect("capture queue poisoned").1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}
