//! Binary frame file ("MVLC", little-endian).
//!
//! Header (24 bytes): magic, version u16, flags u16, point_count u32,
//! timestamp_ns u64, node_id u16, reserved u16. Then one record per point:
//! x, y, z as f32, followed by the optional intensity f32, time index u16
//! and source node u16 selected by the flags.

use std::fs;
use std::path::Path;

use super::{write_atomic, IoError};
use crate::geometry::{Point3, PointCloud};

pub const FRAME_MAGIC: [u8; 4] = *b"MVLC";
pub const FRAME_VERSION: u16 = 1;
pub const FRAME_HEADER_LEN: usize = 24;
pub const FLAG_INTENSITY: u16 = 1;
pub const FLAG_TIME_INDEX: u16 = 1 << 1;
pub const FLAG_SOURCE: u16 = 1 << 2;
/// `node_id` of a cloud without a source node.
pub const NO_NODE: u16 = u16::MAX;

fn record_len(flags: u16) -> usize {
    12 + if flags & FLAG_INTENSITY != 0 { 4 } else { 0 }
        + if flags & FLAG_TIME_INDEX != 0 { 2 } else { 0 }
        + if flags & FLAG_SOURCE != 0 { 2 } else { 0 }
}

/// Serializes a cloud. Coordinates are stored as f32; values that do not
/// fit are rejected.
pub fn encode_frame(cloud: &PointCloud) -> Result<Vec<u8>, IoError> {
    cloud.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    let count = u32::try_from(cloud.len()).map_err(|_| IoError::Invalid("more than u32::MAX points".into()))?;
    let node_id = match cloud.source_node {
        None => NO_NODE,
        Some(NO_NODE) => return Err(IoError::Invalid(format!("node id {NO_NODE} is reserved"))),
        Some(n) => n,
    };
    let mut flags = 0;
    if cloud.has_intensity() {
        flags |= FLAG_INTENSITY;
    }
    if cloud.has_time_index() {
        flags |= FLAG_TIME_INDEX;
    }
    if cloud.has_point_source() {
        flags |= FLAG_SOURCE;
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + cloud.len() * record_len(flags));
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&cloud.timestamp_ns.to_le_bytes());
    out.extend_from_slice(&node_id.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for (i, p) in cloud.points.iter().enumerate() {
        for c in p.coords.iter() {
            let v = *c as f32;
            if !v.is_finite() {
                return Err(IoError::Invalid(format!("point {i} does not fit in f32")));
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
        if flags & FLAG_INTENSITY != 0 {
            out.extend_from_slice(&cloud.intensity[i].to_le_bytes());
        }
        if flags & FLAG_TIME_INDEX != 0 {
            out.extend_from_slice(&cloud.time_index[i].to_le_bytes());
        }
        if flags & FLAG_SOURCE != 0 {
            out.extend_from_slice(&cloud.point_source[i].to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

/// Parses a frame file, checking magic, version, flags and that the
/// payload length matches the declared point count exactly.
pub fn decode_frame(bytes: &[u8]) -> Result<PointCloud, IoError> {
    if bytes.len() < 4 || bytes[..4] != FRAME_MAGIC {
        let mut magic = [0u8; 4];
        let n = bytes.len().min(4);
        magic[..n].copy_from_slice(&bytes[..n]);
        return Err(IoError::BadMagic(magic));
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(IoError::Truncated { expected: FRAME_HEADER_LEN, actual: bytes.len() });
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u16();
    if version != FRAME_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let flags = cur.u16();
    if flags & !(FLAG_INTENSITY | FLAG_TIME_INDEX | FLAG_SOURCE) != 0 {
        return Err(IoError::UnknownFlags(flags));
    }
    let count = u32::from_le_bytes(cur.take()) as usize;
    let timestamp_ns = u64::from_le_bytes(cur.take());
    let node_id = cur.u16();
    let _reserved = cur.u16();
    let expected = count
        .checked_mul(record_len(flags))
        .and_then(|n| n.checked_add(FRAME_HEADER_LEN))
        .ok_or(IoError::Truncated { expected: usize::MAX, actual: bytes.len() })?;
    if bytes.len() < expected {
        return Err(IoError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(IoError::TrailingBytes(bytes.len() - expected));
    }
    let mut cloud = PointCloud {
        timestamp_ns,
        source_node: (node_id != NO_NODE).then_some(node_id),
        points: Vec::with_capacity(count),
        ..PointCloud::default()
    };
    for _ in 0..count {
        let (x, y, z) = (cur.f32(), cur.f32(), cur.f32());
        cloud.points.push(Point3::new(x as f64, y as f64, z as f64));
        if flags & FLAG_INTENSITY != 0 {
            cloud.intensity.push(cur.f32());
        }
        if flags & FLAG_TIME_INDEX != 0 {
            cloud.time_index.push(cur.u16());
        }
        if flags & FLAG_SOURCE != 0 {
            cloud.point_source.push(cur.u16());
        }
    }
    cloud.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(cloud)
}

pub fn write_frame(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_atomic(path, &encode_frame(cloud)?)
}

pub fn read_frame(path: &Path) -> Result<PointCloud, IoError> {
    decode_frame(&fs::read(path).map_err(IoError::at(path))?)
}
