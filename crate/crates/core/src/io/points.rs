//! Binary point frames.
//!
//! Layout, little endian: `"LPC1"`, version `u16`, count `u32`, then count
//! records of `x y z intensity` as `f32`, then the ego pose as 12 `f64`
//! (row-major rotation, then translation). Total length is exactly
//! `10 + 16·count + 96` bytes.

use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidPose};

pub const MAGIC: &[u8; 4] = b"LPC1";
pub const VERSION: u16 = 1;
const HEADER: usize = 10;
const POSE: usize = 96;

pub fn point_frame_len(count: usize) -> usize {
    HEADER + 16 * count + POSE
}

/// Coordinates and intensity are narrowed to `f32`.
pub fn encode_point_frame(cloud: &PointCloud, ego: &RigidPose) -> Vec<u8> {
    let mut b = Vec::with_capacity(point_frame_len(cloud.len()));
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for (p, i) in cloud.points.iter().zip(&cloud.intensity) {
        for v in [p.x, p.y, p.z, *i] {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for v in ego.to_row_major12() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn schema(file: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        location: format!("offset {offset}"),
        message: message.into(),
    }
}

pub(crate) fn f32_at(b: &[u8], o: usize) -> f32 {
    f32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"))
}

pub(crate) fn f64_at(b: &[u8], o: usize) -> f64 {
    f64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"))
}

pub fn decode_point_frame(b: &[u8], file: &str) -> Result<(PointCloud, RigidPose)> {
    if b.len() < HEADER + POSE {
        return Err(schema(file, b.len(), format!("file too short: {} bytes", b.len())));
    }
    if &b[..4] != MAGIC {
        return Err(schema(file, 0, "bad magic"));
    }
    let version = u16::from_le_bytes([b[4], b[5]]);
    if version != VERSION {
        return Err(schema(file, 4, format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(b[6..10].try_into().expect("4 bytes")) as usize;
    let want = point_frame_len(n);
    if b.len() != want {
        return Err(schema(file, b.len().min(want), format!("length {} but {n} points need {want}", b.len())));
    }
    let mut cloud = PointCloud::new();
    for k in 0..n {
        let o = HEADER + 16 * k;
        let v = [f32_at(b, o), f32_at(b, o + 4), f32_at(b, o + 8), f32_at(b, o + 12)];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(schema(file, o, "non-finite point"));
        }
        cloud.push(Point3::new(v[0] as f64, v[1] as f64, v[2] as f64), v[3] as f64);
    }
    let o = HEADER + 16 * n;
    let mut pose = [0.0; 12];
    for (k, p) in pose.iter_mut().enumerate() {
        *p = f64_at(b, o + 8 * k);
    }
    let ego = RigidPose::from_row_major12(pose);
    if !ego.is_valid(1e-6) {
        return Err(schema(file, o, "ego pose is not a rigid transform"));
    }
    Ok((cloud, ego))
}

pub fn write_point_frame(path: &Path, cloud: &PointCloud, ego: &RigidPose) -> Result<()> {
    std::fs::write(path, encode_point_frame(cloud, ego)).map_err(|e| Error::io(path, e))
}

pub fn read_point_frame(path: &Path) -> Result<(PointCloud, RigidPose)> {
    let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_point_frame(&b, &path.display().to_string())
}
