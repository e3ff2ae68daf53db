//! Whole-track training samples for a learned box refiner.
//!
//! A sample holds every proposal of one track plus the points cropped around
//! each proposal, all expressed in the first proposal's box frame.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{ProposalTarget, TrackAssignment};
use crate::error::{Error, Result};
use crate::geometry::{crop_indices, normalize_yaw, to_canonical, Box7, FrameSource, ObjectClass, PointCloud, RigidPose, Transformable};
use crate::rng::RngKey;
use crate::tracking::{Origin, TrackEntry, Tracklet};

pub const TIMESTAMP_CHANNEL: &str = "timestamp_code";
pub const CURRENT_FRAME_CHANNEL: &str = "current_frame_flag";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Total enlargement per dimension (half on each side).
    pub crop_margin: [f64; 3],
    pub max_points: usize,
    /// Code per frame index.
    pub timestamp_scale: f64,
    pub object_margin: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            crop_margin: [2.0; 3],
            max_points: 1024,
            timestamp_scale: 0.01,
            object_margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleProposal {
    pub frame_index: u32,
    /// In the sample frame.
    pub bbox: Box7,
    pub score: f64,
    pub origin: Origin,
}

/// Where a sample point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointSource {
    pub frame_index: u32,
    pub raw_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    pub sequence_id: String,
    pub track_id: u64,
    pub class: ObjectClass,
    pub proposals: Vec<SampleProposal>,
    /// Sample-frame points with the timestamp channel.
    pub points: PointCloud,
    /// One entry per point.
    pub provenance: Vec<PointSource>,
    /// World to sample frame.
    pub base_pose: RigidPose,
    /// Targets with GT boxes in the sample frame.
    pub assignment: Option<TrackAssignment>,
}

impl TrackSample {
    pub fn proposal_at(&self, frame_index: u32) -> Option<&SampleProposal> {
        self.proposals
            .binary_search_by_key(&frame_index, |p| p.frame_index)
            .ok()
            .map(|k| &self.proposals[k])
    }

    /// Attaches targets whose GT boxes are in world coordinates.
    pub fn with_world_assignment(mut self, a: &TrackAssignment) -> Self {
        let mut a = a.clone();
        for t in &mut a.proposals {
            if let Some((id, g)) = t.gt {
                t.gt = Some((id, g.transformed(&self.base_pose)));
            }
        }
        self.assignment = Some(a);
        self
    }

    /// Points back in world coordinates.
    pub fn world_points(&self) -> PointCloud {
        self.points.transformed(&self.base_pose.inverse())
    }
}

/// Indices of `n` of `total` positions, uniform without replacement, sorted.
fn downsample(total: usize, n: usize, key: RngKey) -> Vec<usize> {
    if total <= n {
        return (0..total).collect();
    }
    let mut rng = key.rng();
    let mut v = index::sample(&mut rng, total, n).into_vec();
    v.sort_unstable();
    v
}

/// Crops, downsamples and canonicalizes one track.
pub fn build_sample<F: FrameSource + ?Sized>(
    sequence_id: &str,
    track: &Tracklet,
    frames: &F,
    cfg: &DatasetConfig,
) -> Result<TrackSample> {
    let first = track.entries.first().ok_or(Error::EmptyTrack(track.track_id))?;
    let base_pose = to_canonical(&first.bbox);
    let mut points = PointCloud::new();
    let mut stamps = Vec::new();
    let mut provenance = Vec::new();
    let empty = PointCloud::new();
    for e in &track.entries {
        let cloud = frames.frame_cloud(e.frame_index).unwrap_or(&empty);
        let idx = crop_indices(&e.bbox, cfg.crop_margin, cloud);
        let key = RngKey::new("downsample")
            .str(sequence_id)
            .u64(track.track_id)
            .u64(e.frame_index as u64);
        let keep: Vec<usize> = downsample(idx.len(), cfg.max_points, key).into_iter().map(|k| idx[k]).collect();
        let mut crop = PointCloud::from_points(keep.iter().map(|&i| base_pose.transform_point(&cloud.points[i])).collect());
        crop.intensity = keep.iter().map(|&i| cloud.intensity[i]).collect();
        points.append(&crop);
        stamps.extend(std::iter::repeat_n(cfg.timestamp_scale * e.frame_index as f64, keep.len()));
        provenance.extend(keep.iter().map(|&i| PointSource { frame_index: e.frame_index, raw_index: i as u32 }));
    }
    points.set_channel(TIMESTAMP_CHANNEL, stamps);
    Ok(TrackSample {
        sequence_id: sequence_id.to_string(),
        track_id: track.track_id,
        class: track.class,
        proposals: track
            .entries
            .iter()
            .map(|e| SampleProposal {
                frame_index: e.frame_index,
                bbox: e.bbox.transformed(&base_pose),
                score: e.score,
                origin: e.origin,
            })
            .collect(),
        points,
        provenance,
        base_pose,
        assignment: None,
    })
}

/// Track points around one proposal, with a flag on points from that frame.
pub fn object_crop(sample: &TrackSample, frame_index: u32, margin: f64) -> Result<PointCloud> {
    let p = sample
        .proposal_at(frame_index)
        .ok_or_else(|| Error::Invalid(format!("frame {frame_index} is not in track {}", sample.track_id)))?;
    let idx = crop_indices(&p.bbox, [margin; 3], &sample.points);
    let mut out = sample.points.select(&idx);
    let flags = idx
        .iter()
        .map(|&i| f64::from(u8::from(sample.provenance[i].frame_index == frame_index)))
        .collect();
    out.set_channel(CURRENT_FRAME_CHANNEL, flags);
    Ok(out)
}

/// Global similarity applied to a whole sample: mirror, then rotate about z,
/// then scale, then lift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalAugment {
    /// Mirror across the x axis (y → −y).
    pub flip_x: bool,
    /// Mirror across the y axis (x → −x).
    pub flip_y: bool,
    pub rotation: f64,
    pub scale: f64,
    pub dz: f64,
}

impl GlobalAugment {
    pub fn identity() -> Self {
        Self { flip_x: false, flip_y: false, rotation: 0.0, scale: 1.0, dz: 0.0 }
    }

    fn linear(&self) -> Matrix3<f64> {
        let f = Matrix3::from_diagonal(&Vector3::new(
            if self.flip_y { -1.0 } else { 1.0 },
            if self.flip_x { -1.0 } else { 1.0 },
            1.0,
        ));
        let r = RigidPose::from_yaw(self.rotation, Vector3::zeros()).rotation;
        r * f * self.scale
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let mut q = self.linear() * p;
        q.z += self.dz;
        q
    }

    pub fn apply_box(&self, b: &Box7) -> Box7 {
        let c = self.apply_point(&Point3::from(b.center()));
        let s = self.scale;
        Box7::new(c.x, c.y, c.z, b.l * s, b.w * s, b.h * s, flip_yaw(b.yaw, self.flip_x, self.flip_y) + self.rotation)
    }

    pub fn apply_cloud(&self, c: &PointCloud) -> PointCloud {
        let m = self.linear();
        PointCloud {
            points: c
                .points
                .iter()
                .map(|p| {
                    let mut q = m * p;
                    q.z += self.dz;
                    q
                })
                .collect(),
            intensity: c.intensity.clone(),
            channels: c.channels.clone(),
        }
    }
}

fn flip_yaw(yaw: f64, flip_x: bool, flip_y: bool) -> f64 {
    match (flip_x, flip_y) {
        (false, false) => yaw,
        (true, false) => -yaw,
        (false, true) => std::f64::consts::PI - yaw,
        (true, true) => yaw + std::f64::consts::PI,
    }
}

/// Ranges are symmetric half-widths unless given as `[lo, hi]` factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation: f64,
    pub flip_probability: f64,
    pub scale: [f64; 2],
    pub z_shift: f64,
    /// Center jitter as fractions of `[l, w, h]`, in the box frame.
    pub jitter_center: [f64; 3],
    pub jitter_lw: [f64; 2],
    pub jitter_h: [f64; 2],
    pub jitter_yaw: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: 0.78,
            flip_probability: 0.5,
            scale: [0.95, 1.05],
            z_shift: 0.2,
            jitter_center: [0.2, 0.2, 0.1],
            jitter_lw: [0.8, 1.2],
            jitter_h: [0.9, 1.1],
            jitter_yaw: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Every draw degenerates to the identity.
    pub fn none() -> Self {
        Self {
            rotation: 0.0,
            flip_probability: 0.0,
            scale: [1.0, 1.0],
            z_shift: 0.0,
            jitter_center: [0.0; 3],
            jitter_lw: [1.0, 1.0],
            jitter_h: [1.0, 1.0],
            jitter_yaw: 0.0,
        }
    }
}

fn sym<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn span<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Draws the global part of an augmentation.
pub fn draw_global<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentConfig) -> GlobalAugment {
    GlobalAugment {
        flip_x: rng.random_bool(cfg.flip_probability.clamp(0.0, 1.0)),
        flip_y: rng.random_bool(cfg.flip_probability.clamp(0.0, 1.0)),
        rotation: sym(rng, cfg.rotation),
        scale: span(rng, cfg.scale),
        dz: sym(rng, cfg.z_shift),
    }
}

/// Applies the global transform to points, proposals and GT boxes, then
/// jitters each proposal independently. Targets are recomputed against the
/// jittered proposals.
pub fn augment_with(sample: &TrackSample, g: &GlobalAugment, jitter: Option<(&mut dyn rand::RngCore, &AugmentConfig)>) -> TrackSample {
    let mut out = sample.clone();
    out.points = g.apply_cloud(&sample.points);
    for p in &mut out.proposals {
        p.bbox = g.apply_box(&p.bbox);
    }
    if let Some(a) = &mut out.assignment {
        for t in &mut a.proposals {
            if let Some((id, gb)) = t.gt {
                t.gt = Some((id, g.apply_box(&gb)));
            }
        }
    }
    if let Some((rng, cfg)) = jitter {
        let before: Vec<Box7> = out.proposals.iter().map(|p| p.bbox).collect();
        for p in &mut out.proposals {
            let b = p.bbox;
            let local = Vector3::new(
                sym(rng, cfg.jitter_center[0] * b.l),
                sym(rng, cfg.jitter_center[1] * b.w),
                sym(rng, cfg.jitter_center[2] * b.h),
            );
            let c = b.center() + RigidPose::from_yaw(b.yaw, Vector3::zeros()).rotation * local;
            let sl = span(rng, cfg.jitter_lw);
            let sw = span(rng, cfg.jitter_lw);
            let sh = span(rng, cfg.jitter_h);
            let dyaw = sym(rng, cfg.jitter_yaw);
            p.bbox = Box7::new(c.x, c.y, c.z, b.l * sl, b.w * sw, b.h * sh, b.yaw + dyaw);
        }
        if let Some(a) = &mut out.assignment {
            for t in &mut a.proposals {
                let k = out.proposals.iter().position(|p| p.frame_index == t.frame_index);
                if let (Some((id, gb)), Some(k)) = (t.gt, k) {
                    if out.proposals[k].bbox != before[k] {
                        *t = ProposalTarget::positive(t.frame_index, &out.proposals[k].bbox, id, &gb);
                    }
                }
            }
        }
    }
    out
}

/// Full augmentation, deterministic in `(seed, sequence_id, track_id)`.
pub fn augment(sample: &TrackSample, seed: u64, cfg: &AugmentConfig) -> TrackSample {
    let mut rng = RngKey::new("augment")
        .u64(seed)
        .str(&sample.sequence_id)
        .u64(sample.track_id)
        .rng();
    let g = draw_global(&mut rng, cfg);
    augment_with(sample, &g, Some((&mut rng, cfg)))
}

/// A test-time transform about a pivot: mirror, then rotate about z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtaTransform {
    pub flip_x: bool,
    pub flip_y: bool,
    pub rotation: f64,
    pub pivot: [f64; 3],
}

impl TtaTransform {
    pub fn is_identity(&self) -> bool {
        !self.flip_x && !self.flip_y && self.rotation == 0.0
    }

    pub fn tag(&self) -> String {
        format!(
            "fx{}-fy{}-r{:+.0}",
            u8::from(self.flip_x),
            u8::from(self.flip_y),
            self.rotation.to_degrees()
        )
    }

    fn mirror(&self, v: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            if self.flip_y { -v.x } else { v.x },
            if self.flip_x { -v.y } else { v.y },
            v.z,
        )
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let o = Vector3::from(self.pivot);
        let r = RigidPose::from_yaw(self.rotation, Vector3::zeros()).rotation;
        Point3::from(r * self.mirror(p.coords - o) + o)
    }

    pub fn invert_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let o = Vector3::from(self.pivot);
        let r = RigidPose::from_yaw(-self.rotation, Vector3::zeros()).rotation;
        Point3::from(self.mirror(r * (p.coords - o)) + o)
    }

    pub fn apply_box(&self, b: &Box7) -> Box7 {
        if self.is_identity() {
            return *b;
        }
        let c = self.apply_point(&Point3::from(b.center()));
        Box7::new(c.x, c.y, c.z, b.l, b.w, b.h, flip_yaw(b.yaw, self.flip_x, self.flip_y) + self.rotation)
    }

    pub fn invert_box(&self, b: &Box7) -> Box7 {
        if self.is_identity() {
            return *b;
        }
        let c = self.invert_point(&Point3::from(b.center()));
        let yaw = flip_yaw(normalize_yaw(b.yaw - self.rotation), self.flip_x, self.flip_y);
        Box7::new(c.x, c.y, c.z, b.l, b.w, b.h, yaw)
    }

    pub fn apply_cloud(&self, c: &PointCloud) -> PointCloud {
        PointCloud {
            points: c.points.iter().map(|p| self.apply_point(p)).collect(),
            intensity: c.intensity.clone(),
            channels: c.channels.clone(),
        }
    }

    fn map_track(&self, t: &Tracklet, f: impl Fn(&Box7) -> Box7) -> Tracklet {
        Tracklet {
            entries: t.entries.iter().map(|e| TrackEntry { bbox: f(&e.bbox), ..*e }).collect(),
            ..t.clone()
        }
    }

    pub fn apply_track(&self, t: &Tracklet) -> Tracklet {
        self.map_track(t, |b| self.apply_box(b))
    }

    /// Maps a track refined in the transformed space back.
    pub fn invert_track(&self, t: &Tracklet) -> Tracklet {
        self.map_track(t, |b| self.invert_box(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTrack {
    pub transform: TtaTransform,
    pub track: Tracklet,
}

/// The four mirror combinations, optionally times rotations of
/// −2π/3, 0 and 2π/3, about the first box center. Identity comes first.
pub fn tta_variants(track: &Tracklet, with_rotations: bool) -> Vec<TransformedTrack> {
    let pivot = track.entries.first().map_or([0.0; 3], |e| e.bbox.center().into());
    let third = 2.0 * std::f64::consts::PI / 3.0;
    let rotations: &[f64] = if with_rotations { &[0.0, -third, third] } else { &[0.0] };
    let mut out = Vec::new();
    for &rotation in rotations {
        for (flip_x, flip_y) in [(false, false), (true, false), (false, true), (true, true)] {
            let transform = TtaTransform { flip_x, flip_y, rotation, pivot };
            out.push(TransformedTrack { transform, track: transform.apply_track(track) });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{crop_points, iou3d};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn entry(f: u32, b: Box7) -> TrackEntry {
        TrackEntry { frame_index: f, bbox: b, score: 0.8, origin: Origin::Detected }
    }

    fn track(boxes: Vec<(u32, Box7)>) -> Tracklet {
        Tracklet {
            track_id: 5,
            class: ObjectClass::Vehicle,
            entries: boxes.into_iter().map(|(f, b)| entry(f, b)).collect(),
        }
    }

    fn blob(rng: &mut ChaCha8Rng, center: [f64; 3], n: usize, spread: f64) -> PointCloud {
        let mut c = PointCloud::new();
        for _ in 0..n {
            let p = Point3::new(
                center[0] + rng.random_range(-spread..spread),
                center[1] + rng.random_range(-spread..spread),
                center[2] + rng.random_range(-spread..spread),
            );
            c.push(p, rng.random_range(0.0..1.0));
        }
        c
    }

    #[test]
    fn single_frame_sample_is_the_expanded_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Box7::new(10.0, -3.0, 0.5, 4.0, 2.0, 1.5, 0.4);
        let mut frames = BTreeMap::new();
        frames.insert(7u32, blob(&mut rng, [10.0, -3.0, 0.5], 600, 4.0));
        let t = track(vec![(7, b)]);
        let s = build_sample("seq", &t, &frames, &DatasetConfig::default()).unwrap();
        let want = crop_points(&b, [2.0; 3], &frames[&7]);
        assert_eq!(s.points.len(), want.len());
        let back = s.world_points();
        for (p, q) in back.points.iter().zip(&want.points) {
            assert!((p - q).norm() < 1e-9);
        }
        assert!(s.points.channel(TIMESTAMP_CHANNEL).unwrap().iter().all(|&c| c == 0.01 * 7.0));
    }

    #[test]
    fn static_object_crops_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = Box7::new(3.0, 4.0, 0.0, 4.0, 2.0, 1.5, -1.0);
        let cloud = blob(&mut rng, [3.0, 4.0, 0.0], 300, 2.0);
        let frames: BTreeMap<u32, PointCloud> = (0..3).map(|f| (f, cloud.clone())).collect();
        let t = track((0..3).map(|f| (f, b)).collect());
        let s = build_sample("seq", &t, &frames, &DatasetConfig::default()).unwrap();
        let per: Vec<Vec<Point3<f64>>> = (0..3)
            .map(|f| {
                s.points.points.iter().zip(&s.provenance).filter(|(_, src)| src.frame_index == f).map(|(p, _)| *p).collect()
            })
            .collect();
        assert_eq!(per[0].len(), per[1].len());
        for f in 1..3 {
            for (p, q) in per[0].iter().zip(&per[f]) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn large_crop_is_downsampled_without_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0);
        let mut frames = BTreeMap::new();
        frames.insert(0u32, blob(&mut rng, [0.0; 3], 2000, 0.7));
        let t = track(vec![(0, b)]);
        assert_eq!(crop_indices(&b, [2.0; 3], &frames[&0]).len(), 2000);
        let s = build_sample("seq", &t, &frames, &DatasetConfig::default()).unwrap();
        assert_eq!(s.points.len(), 1024);
        let mut raw: Vec<u32> = s.provenance.iter().map(|p| p.raw_index).collect();
        raw.dedup();
        assert_eq!(raw.len(), 1024);
        for (p, src) in s.world_points().points.iter().zip(&s.provenance) {
            assert!((p - frames[&0].points[src.raw_index as usize]).norm() < 1e-9);
        }
        let again = build_sample("seq", &t, &frames, &DatasetConfig::default()).unwrap();
        assert_eq!(again, s);
        let other = build_sample("seq2", &t, &frames, &DatasetConfig::default()).unwrap();
        assert_ne!(other.provenance, s.provenance);
    }

    #[test]
    fn empty_track_and_missing_frames() {
        let t = track(vec![]);
        let frames: BTreeMap<u32, PointCloud> = BTreeMap::new();
        assert!(matches!(build_sample("s", &t, &frames, &DatasetConfig::default()), Err(Error::EmptyTrack(5))));
        let t = track(vec![(3, Box7::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0))]);
        let s = build_sample("s", &t, &frames, &DatasetConfig::default()).unwrap();
        assert!(s.points.is_empty());
        assert_eq!(s.proposals.len(), 1);
    }

    #[test]
    fn object_crop_flags_current_frame() {
        let b = Box7::new(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let mut frames = BTreeMap::new();
        frames.insert(0u32, PointCloud::from_points(vec![Point3::new(0.2, 0.0, 0.0), Point3::new(1.2, 0.0, 0.0)]));
        frames.insert(1u32, PointCloud::from_points(vec![Point3::new(-0.3, 0.1, 0.0), Point3::new(5.0, 0.0, 0.0)]));
        let t = track(vec![(0, b), (1, b)]);
        let s = build_sample("s", &t, &frames, &DatasetConfig::default()).unwrap();
        assert_eq!(s.points.len(), 3);
        let c = object_crop(&s, 1, 0.5).unwrap();
        assert_eq!(c.len(), 3);
        let flags = c.channel(CURRENT_FRAME_CHANNEL).unwrap();
        let stamps = c.channel(TIMESTAMP_CHANNEL).unwrap();
        for (f, t) in flags.iter().zip(stamps) {
            assert_eq!(*f, if *t == 0.01 { 1.0 } else { 0.0 });
        }
        let oracle = crop_points(&s.proposals[1].bbox, [0.5; 3], &s.points);
        assert_eq!(c.points, oracle.points);
        let tight = object_crop(&s, 0, 0.0).unwrap();
        assert_eq!(tight.len(), 2);
        assert!(object_crop(&s, 9, 0.5).is_err());
    }

    fn rich_sample() -> TrackSample {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let boxes: Vec<(u32, Box7)> = (0..4).map(|f| (f, Box7::new(20.0 + f as f64, 5.0, 0.8, 4.5, 1.9, 1.6, 0.3))).collect();
        let frames: BTreeMap<u32, PointCloud> =
            boxes.iter().map(|(f, b)| (*f, blob(&mut rng, [b.cx, b.cy, b.cz], 400, 2.5))).collect();
        let t = track(boxes.clone());
        let a = TrackAssignment {
            track_id: 5,
            matched: true,
            candidates: vec![(1, 0.8)],
            proposals: boxes
                .iter()
                .map(|(f, b)| {
                    let g = Box7::new(b.cx + 0.3, b.cy - 0.2, b.cz, 4.4, 2.0, 1.5, 0.35);
                    ProposalTarget::positive(*f, b, 1, &g)
                })
                .collect(),
        };
        build_sample("seq", &t, &frames, &DatasetConfig::default()).unwrap().with_world_assignment(&a)
    }

    #[test]
    fn augmentation_is_deterministic_and_identity_without_noise() {
        let s = rich_sample();
        let a = augment(&s, 17, &AugmentConfig::default());
        assert_eq!(a, augment(&s, 17, &AugmentConfig::default()));
        assert_ne!(a, augment(&s, 18, &AugmentConfig::default()));
        let z = augment(&s, 17, &AugmentConfig::none());
        assert_eq!(z, s);
    }

    #[test]
    fn global_transform_preserves_membership_and_iou() {
        let s = rich_sample();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g = draw_global(&mut rng, &AugmentConfig::default());
            let a = augment_with(&s, &g, None);
            for (p, q) in s.proposals.iter().zip(&a.proposals) {
                let before = crop_indices(&p.bbox, [0.0; 3], &s.points);
                let after = crop_indices(&q.bbox, [0.0; 3], &a.points);
                assert_eq!(before, after);
            }
            let (t0, t1) = (s.assignment.as_ref().unwrap(), a.assignment.as_ref().unwrap());
            for ((p, q), (u, v)) in s.proposals.iter().zip(&a.proposals).zip(t0.proposals.iter().zip(&t1.proposals)) {
                let i0 = iou3d(&p.bbox, &u.gt.unwrap().1);
                let i1 = iou3d(&q.bbox, &v.gt.unwrap().1);
                assert!((i0 - i1).abs() < 1e-6, "{i0} vs {i1}");
            }
        }
    }

    #[test]
    fn jittered_targets_follow_the_proposals() {
        let s = rich_sample();
        let a = augment(&s, 3, &AugmentConfig::default());
        for (p, t) in a.proposals.iter().zip(&a.assignment.as_ref().unwrap().proposals) {
            let g = t.gt.unwrap().1;
            assert!((t.iou - iou3d(&p.bbox, &g)).abs() < 1e-12);
        }
    }

    #[test]
    fn tta_variants_round_trip() {
        let t = track((0..5).map(|f| (f, Box7::new(30.0 + f as f64, -7.0, 1.0, 4.0, 2.0, 1.5, 0.7))).collect());
        let v = tta_variants(&t, false);
        assert_eq!(v.len(), 4);
        assert_eq!(v[0].track, t);
        assert!(v[0].transform.is_identity());
        assert_eq!(tta_variants(&t, true).len(), 12);
        for x in tta_variants(&t, true) {
            let back = x.transform.invert_track(&x.track);
            for (a, b) in back.entries.iter().zip(&t.entries) {
                let (a, b) = (a.bbox.to_array(), b.bbox.to_array());
                for k in 0..6 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
                assert!(normalize_yaw(a[6] - b[6]).abs() < 1e-12);
            }
        }
        let f = TtaTransform { flip_x: true, flip_y: false, rotation: 0.0, pivot: [1.0, 2.0, 3.0] };
        let b = t.entries[2].bbox;
        assert_eq!(f.apply_box(&f.apply_box(&b)), b);
    }
}
