//! Track-sample container.
//!
//! Little endian. Header: `"LTS1"`, version `u16`, record count `u32`.
//! Each record is a `u32` byte length followed by:
//!
//! - metadata: sequence id (`u16` length + UTF-8), track id `u64`, class
//!   `u8`, base pose as 12 `f64`;
//! - proposals: `u32` count, then per proposal frame `u32`, box 7 `f64`,
//!   score `f64`, origin `u8`;
//! - assignment: `u8` presence; if present matched `u8`, `u32` count, then
//!   per target frame `u32`, GT presence `u8`, GT id `u64`, GT box 7 `f64`,
//!   IoU `f64`, soft target `f64`, residual presence `u8`, residual 7 `f64`;
//! - points: `u32` count, then `x y z intensity timestamp_code` as `f32`
//!   per point, then one flag byte per point (origin code of the source
//!   proposal), then per point source frame `u32` and raw index `u32`.

use std::path::Path;

use nalgebra::Point3;

use super::points::{f32_at, f64_at};
use crate::assignment::{ProposalTarget, TrackAssignment};
use crate::dataset::{PointSource, SampleProposal, TrackSample, TIMESTAMP_CHANNEL};
use crate::error::{Error, Result};
use crate::geometry::{Box7, ObjectClass, PointCloud, RigidPose};
use crate::tracking::Origin;

pub const MAGIC: &[u8; 4] = b"LTS1";
pub const VERSION: u16 = 1;

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn box7(&mut self, b: &Box7) {
        for v in b.to_array() {
            self.f64(v);
        }
    }
}

fn encode_record(s: &TrackSample) -> Vec<u8> {
    let mut w = W(Vec::new());
    w.u16(s.sequence_id.len() as u16);
    w.0.extend_from_slice(s.sequence_id.as_bytes());
    w.u64(s.track_id);
    w.u8(s.class.code());
    for v in s.base_pose.to_row_major12() {
        w.f64(v);
    }
    w.u32(s.proposals.len() as u32);
    for p in &s.proposals {
        w.u32(p.frame_index);
        w.box7(&p.bbox);
        w.f64(p.score);
        w.u8(p.origin.code());
    }
    match &s.assignment {
        None => w.u8(0),
        Some(a) => {
            w.u8(1);
            w.u8(a.matched as u8);
            w.u32(a.proposals.len() as u32);
            for t in &a.proposals {
                w.u32(t.frame_index);
                let (id, g) = t.gt.unwrap_or((0, Box7::from_array([0.0; 7])));
                w.u8(t.gt.is_some() as u8);
                w.u64(id);
                w.box7(&g);
                w.f64(t.iou);
                w.f64(t.q);
                w.u8(t.residual.is_some() as u8);
                for v in t.residual.unwrap_or([0.0; 7]) {
                    w.f64(v);
                }
            }
        }
    }
    let n = s.points.len();
    w.u32(n as u32);
    let ts = s.points.channel(TIMESTAMP_CHANNEL);
    for k in 0..n {
        let p = s.points.points[k];
        for v in [p.x, p.y, p.z, s.points.intensity[k], ts.map_or(0.0, |t| t[k])] {
            w.f32(v);
        }
    }
    for src in &s.provenance {
        let origin = s.proposal_at(src.frame_index).map_or(0, |p| p.origin.code());
        w.u8(origin);
    }
    for src in &s.provenance {
        w.u32(src.frame_index);
        w.u32(src.raw_index);
    }
    w.0
}

/// Whole container in memory.
pub fn encode_samples(samples: &[TrackSample]) -> Vec<u8> {
    let mut w = W(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u32(samples.len() as u32);
    for s in samples {
        let r = encode_record(s);
        w.u32(r.len() as u32);
        w.0.extend_from_slice(&r);
    }
    w.0
}

struct R<'a> {
    b: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> R<'a> {
    fn err(&self, m: impl Into<String>) -> Error {
        Error::Schema { file: self.file.to_string(), location: format!("offset {}", self.pos), message: m.into() }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.err(format!("flag byte {v}"))),
        }
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f64> {
        let v = f32_at(self.take(4)?, 0);
        Ok(v as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64_at(self.take(8)?, 0))
    }
    fn box7(&mut self) -> Result<Box7> {
        let mut a = [0.0; 7];
        for v in &mut a {
            *v = self.f64()?;
        }
        Ok(Box7::from_array(a))
    }
    /// Count whose items need at least `unit` bytes each.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(unit) > self.b.len() - self.pos {
            return Err(self.err(format!("count {n} exceeds the remaining bytes")));
        }
        Ok(n)
    }
}

fn decode_record(r: &mut R<'_>) -> Result<TrackSample> {
    let len = r.u16()? as usize;
    let sequence_id = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("sequence id is not UTF-8"))?.to_string();
    let track_id = r.u64()?;
    let code = r.u8()?;
    let class = ObjectClass::from_code(code).ok_or_else(|| r.err(format!("class code {code}")))?;
    let mut pose = [0.0; 12];
    for v in &mut pose {
        *v = r.f64()?;
    }
    let base_pose = RigidPose::from_row_major12(pose);
    let n = r.count(69)?;
    let mut proposals = Vec::with_capacity(n);
    for _ in 0..n {
        let frame_index = r.u32()?;
        let bbox = r.box7()?;
        let score = r.f64()?;
        let c = r.u8()?;
        let origin = Origin::from_code(c).ok_or_else(|| r.err(format!("origin code {c}")))?;
        proposals.push(SampleProposal { frame_index, bbox, score, origin });
    }
    let assignment = if r.flag()? {
        let matched = r.flag()?;
        let n = r.count(142)?;
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let frame_index = r.u32()?;
            let has_gt = r.flag()?;
            let id = r.u64()?;
            let g = r.box7()?;
            let iou = r.f64()?;
            let q = r.f64()?;
            let has_res = r.flag()?;
            let mut res = [0.0; 7];
            for v in &mut res {
                *v = r.f64()?;
            }
            targets.push(ProposalTarget {
                frame_index,
                gt: has_gt.then_some((id, g)),
                iou,
                q,
                residual: has_res.then_some(res),
            });
        }
        Some(TrackAssignment { track_id, matched, candidates: Vec::new(), proposals: targets })
    } else {
        None
    };
    let n = r.count(29)?;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut stamps = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(Point3::new(r.f32()?, r.f32()?, r.f32()?));
        intensity.push(r.f32()?);
        stamps.push(r.f32()?);
    }
    r.take(n)?;
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        provenance.push(PointSource { frame_index: r.u32()?, raw_index: r.u32()? });
    }
    let mut cloud = PointCloud::from_points(points);
    cloud.intensity = intensity;
    cloud.set_channel(TIMESTAMP_CHANNEL, stamps);
    Ok(TrackSample { sequence_id, track_id, class, proposals, points: cloud, provenance, base_pose, assignment })
}

/// Points, intensities and timestamp codes come back narrowed to `f32`;
/// assignment candidates are not stored.
pub fn decode_samples(b: &[u8], file: &str) -> Result<Vec<TrackSample>> {
    let mut r = R { b, pos: 0, file };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic"));
    }
    let v = r.u16()?;
    if v != VERSION {
        return Err(r.err(format!("unsupported version {v}")));
    }
    let n = r.count(4)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let start = r.pos;
        let body = r.take(len)?;
        let mut sub = R { b: body, pos: 0, file };
        let s = decode_record(&mut sub).map_err(|e| match e {
            Error::Schema { file, message, .. } => {
                Error::Schema { file, location: format!("offset {}", start + sub.pos), message }
            }
            other => other,
        })?;
        if sub.pos != len {
            return Err(Error::Schema {
                file: file.to_string(),
                location: format!("offset {}", start + sub.pos),
                message: format!("record declares {len} bytes but uses {}", sub.pos),
            });
        }
        out.push(s);
    }
    if r.pos != b.len() {
        return Err(r.err(format!("{} trailing bytes", b.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[TrackSample]) -> Result<()> {
    std::fs::write(path, encode_samples(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<TrackSample>> {
    let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_samples(&b, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_sample, DatasetConfig};
    use crate::tracking::{TrackEntry, Tracklet};
    use std::collections::BTreeMap;

    fn sample() -> TrackSample {
        let b = Box7::new(2.0, 1.0, 0.8, 4.0, 2.0, 1.5, 0.5);
        let mut frames = BTreeMap::new();
        for f in 0..3u32 {
            let pts = (0..20).map(|k| Point3::new(2.0 + 0.1 * k as f64, 1.0, 0.5 + 0.01 * f as f64)).collect();
            frames.insert(f, PointCloud::from_points(pts));
        }
        let t = Tracklet {
            track_id: 11,
            class: ObjectClass::Vehicle,
            entries: (0..3)
                .map(|f| TrackEntry { frame_index: f, bbox: b, score: 0.6, origin: if f == 2 { Origin::Filled } else { Origin::Detected } })
                .collect(),
        };
        let a = TrackAssignment {
            track_id: 11,
            matched: true,
            candidates: Vec::new(),
            proposals: vec![
                ProposalTarget::positive(0, &b, 3, &Box7::new(2.2, 1.0, 0.8, 4.0, 2.0, 1.5, 0.5)),
                ProposalTarget::negative(1),
                ProposalTarget::negative(2),
            ],
        };
        build_sample("seq_0001", &t, &frames, &DatasetConfig::default()).unwrap().with_world_assignment(&a)
    }

    #[test]
    fn round_trip_keeps_structure() {
        let s = sample();
        let b = encode_samples(&[s.clone(), s.clone()]);
        let back = decode_samples(&b, "x").unwrap();
        assert_eq!(back.len(), 2);
        let r = &back[0];
        assert_eq!(r.proposals, s.proposals);
        assert_eq!(r.provenance, s.provenance);
        assert_eq!(r.assignment, s.assignment);
        assert_eq!(r.base_pose, s.base_pose);
        for (p, q) in r.points.points.iter().zip(&s.points.points) {
            assert!((p - q).norm() < 1e-5);
        }
        assert_eq!(encode_samples(&back), b);
    }

    #[test]
    fn rejects_garbage() {
        let b = encode_samples(&[sample()]);
        let mut long = b.clone();
        long.push(7);
        assert!(matches!(decode_samples(&long, "x"), Err(Error::Schema { .. })));
        assert!(decode_samples(&b[..b.len() - 3], "x").is_err());
        let mut magic = b.clone();
        magic[1] = 0;
        assert!(decode_samples(&magic, "x").is_err());
        assert!(decode_samples(&encode_samples(&[]), "x").unwrap().is_empty());
    }
}
