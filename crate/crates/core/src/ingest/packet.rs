//! 19-byte orientation packet.
//!
//! ```text
//! off  len  field
//!   0    1  magic 0xE5
//!   1    1  version (1)
//!   2    1  sensor id
//!   3    2  seq (u16 LE)
//!   5    4  timestamp_us (u32 LE)
//!   9    8  qw qx qy qz, i16 LE, Q14
//!  17    1  status flags
//!  18    1  XOR of bytes 0..=17
//! ```

use crate::rotmath::UnitQuat;

use super::{IngestError, SensorSample};

pub const PACKET_LEN: usize = 19;
pub const PACKET_MAGIC: u8 = 0xE5;
pub const PROTOCOL_VERSION: u8 = 1;

const Q14_ONE: f64 = 16384.0;

fn to_q14(v: f64) -> i16 {
    (v * Q14_ONE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn round_q14(c: [f64; 4]) -> [i16; 4] {
    [to_q14(c[0]), to_q14(c[1]), to_q14(c[2]), to_q14(c[3])]
}

/// Q14 components chosen as a fixed point of decode-then-encode, so a decoded
/// quaternion re-encodes to the same bytes.
fn q14_components(q: &UnitQuat) -> [i16; 4] {
    let mut c = round_q14(q.canonical().to_array());
    for _ in 0..16 {
        let next = round_q14(from_q14(c).canonical().to_array());
        if next == c {
            break;
        }
        c = next;
    }
    c
}

fn from_q14(c: [i16; 4]) -> UnitQuat {
    let f = |v: i16| v as f64 / Q14_ONE;
    UnitQuat::try_new(f(c[0]), f(c[1]), f(c[2]), f(c[3])).unwrap_or(UnitQuat::IDENTITY)
}

/// The orientation a receiver recovers after the quaternion crosses the wire.
///
/// Idempotent: quantizing an already quantized value returns it unchanged.
pub fn quantize_q14(q: &UnitQuat) -> UnitQuat {
    from_q14(q14_components(q))
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

pub fn encode_packet(s: &SensorSample) -> [u8; PACKET_LEN] {
    let mut out = [0u8; PACKET_LEN];
    out[0] = PACKET_MAGIC;
    out[1] = PROTOCOL_VERSION;
    out[2] = s.sensor_id;
    out[3..5].copy_from_slice(&s.seq.to_le_bytes());
    out[5..9].copy_from_slice(&s.timestamp_us.to_le_bytes());
    for (i, c) in q14_components(&s.q).iter().enumerate() {
        out[9 + 2 * i..11 + 2 * i].copy_from_slice(&c.to_le_bytes());
    }
    out[17] = s.status;
    out[18] = checksum(&out[..18]);
    out
}

/// Parses the first [`PACKET_LEN`] bytes of `bytes`.
pub fn decode_packet(bytes: &[u8]) -> Result<SensorSample, IngestError> {
    if bytes.len() < PACKET_LEN {
        return Err(IngestError::Incomplete {
            have: bytes.len(),
            need: PACKET_LEN,
        });
    }
    let b = &bytes[..PACKET_LEN];
    if b[0] != PACKET_MAGIC {
        return Err(IngestError::Protocol(format!("bad magic {:#04x}", b[0])));
    }
    if b[1] != PROTOCOL_VERSION {
        return Err(IngestError::Protocol(format!("unsupported version {}", b[1])));
    }
    let expected = checksum(&b[..18]);
    if expected != b[18] {
        return Err(IngestError::CorruptPacket {
            expected,
            found: b[18],
        });
    }
    let mut c = [0i16; 4];
    for (i, v) in c.iter_mut().enumerate() {
        *v = i16::from_le_bytes([b[9 + 2 * i], b[10 + 2 * i]]);
    }
    if c.iter().all(|v| *v == 0) {
        return Err(IngestError::Protocol("zero quaternion".into()));
    }
    Ok(SensorSample {
        sensor_id: b[2],
        seq: u16::from_le_bytes([b[3], b[4]]),
        timestamp_us: u32::from_le_bytes([b[5], b[6], b[7], b[8]]),
        q: from_q14(c),
        status: b[17],
    })
}
