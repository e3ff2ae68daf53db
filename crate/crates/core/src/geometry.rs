//! Rigid 3D geometry: oriented boxes, rigid poses, point clouds, box IoU and
//! point cropping.
//!
//! All functions here are pure; every type is a plain value.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Point3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-edge tolerance for half-plane clipping, meters.
pub const CLIP_EPS: f64 = 1e-9;
/// Intersections below this area (m²) or volume (m³) count as empty.
pub const MIN_INTERSECTION: f64 = 1e-12;

/// Map an angle to (−π, π].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let r = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Object category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "Vehicle",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ObjectClass::Vehicle => 0,
            ObjectClass::Pedestrian => 1,
            ObjectClass::Cyclist => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Vehicle" => Ok(ObjectClass::Vehicle),
            "Pedestrian" => Ok(ObjectClass::Pedestrian),
            "Cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(Error::Invalid(format!("unknown class {other:?}"))),
        }
    }
}

/// A 7-DoF oriented box: center, size (length along heading, width, height)
/// and yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box7 {
    /// Builds a box, normalizing yaw. Sizes are not checked; see [`Box7::try_new`].
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        Self {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: normalize_yaw(yaw),
        }
    }

    pub fn try_new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        let b = Self::new(cx, cy, cz, l, w, h, yaw);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("box has non-finite values".into()));
        }
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Invalid(format!(
                "box sizes must be positive, got ({}, {}, {})",
                self.l, self.w, self.h
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::Invalid(format!("yaw {} outside (-pi, pi]", self.yaw)));
        }
        Ok(())
    }

    /// `[cx, cy, cz, l, w, h, yaw]`
    pub fn to_array(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.cx, self.cy, self.cz)
    }

    pub fn with_center(mut self, c: Vector3<f64>) -> Self {
        self.cx = c.x;
        self.cy = c.y;
        self.cz = c.z;
        self
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn bev_diagonal(&self) -> f64 {
        (self.l * self.l + self.w * self.w).sqrt()
    }

    /// Enlarges each dimension by `margin` (half per side).
    pub fn expanded(&self, margin: [f64; 3]) -> Self {
        Self {
            l: self.l + margin[0],
            w: self.w + margin[1],
            h: self.h + margin[2],
            ..*self
        }
    }

    /// BEV corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, y)| {
            Vector2::new(self.cx + c * x - s * y, self.cy + s * x + c * y)
        })
    }

    fn z_range(&self) -> (f64, f64) {
        (self.cz - 0.5 * self.h, self.cz + 0.5 * self.h)
    }

    /// Same BEV footprint: identical center and size, yaw equal modulo π.
    fn same_footprint(&self, other: &Box7) -> bool {
        if self.cx != other.cx || self.cy != other.cy || self.l != other.l || self.w != other.w {
            return false;
        }
        let d = normalize_yaw(self.yaw - other.yaw).abs();
        d < 1e-12 || (PI - d) < 1e-12
    }

    fn total_cmp(&self, other: &Box7) -> Ordering {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    }
}

/// A detection or annotation: box plus class, confidence and frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub bbox: Box7,
    pub class: ObjectClass,
    pub score: f64,
    pub frame_index: u32,
}

/// A proper rigid transform `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation about +z by `yaw`, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    /// Rotation from an axis-angle vector.
    pub fn from_scaled_axis(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_scaled_axis(axis_angle).matrix(),
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Heading of the rotated +x axis projected to the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Projects the rotation back onto SO(3).
    pub fn renormalized(&self) -> RigidPose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        RigidPose {
            rotation: r,
            translation: self.translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).amax() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Row-major rotation followed by translation.
    pub fn to_row_major12(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_row_major12(v: [f64; 12]) -> RigidPose {
        RigidPose {
            rotation: Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]),
            translation: Vector3::new(v[9], v[10], v[11]),
        }
    }
}

/// Points with intensity and optional named scalar channels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub intensity: Vec<f64>,
    pub channels: BTreeMap<String, Vec<f64>>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    /// Points with zero intensity.
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        let intensity = vec![0.0; points.len()];
        Self {
            points,
            intensity,
            channels: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends a point. Existing channels are padded with 0.
    pub fn push(&mut self, p: Point3<f64>, intensity: f64) {
        self.points.push(p);
        self.intensity.push(intensity);
        for ch in self.channels.values_mut() {
            ch.push(0.0);
        }
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.get(name).map(|v| v.as_slice())
    }

    pub fn set_channel(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.len(), "channel length mismatch");
        self.channels.insert(name.to_string(), values);
    }

    /// Subset in the given index order, carrying all channels.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: indices.iter().map(|&i| self.intensity[i]).collect(),
            channels: self
                .channels
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// Appends `other`. Channels missing on either side are filled with 0.
    pub fn append(&mut self, other: &PointCloud) {
        let n0 = self.len();
        for (k, v) in &other.channels {
            self.channels
                .entry(k.clone())
                .or_insert_with(|| vec![0.0; n0])
                .extend_from_slice(v);
        }
        for v in self.channels.values_mut() {
            v.resize(n0 + other.len(), 0.0);
        }
        self.points.extend_from_slice(&other.points);
        self.intensity.extend_from_slice(&other.intensity);
    }

    pub fn is_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
    }
}

/// Values that can be moved by a rigid pose.
pub trait Transformable: Sized {
    fn transformed(&self, pose: &RigidPose) -> Self;
}

impl Transformable for Box7 {
    fn transformed(&self, pose: &RigidPose) -> Self {
        let c = pose.transform_point(&Point3::from(self.center()));
        let heading = pose.transform_vector(&Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0));
        Box7::new(c.x, c.y, c.z, self.l, self.w, self.h, heading.y.atan2(heading.x))
    }
}

impl Transformable for PointCloud {
    fn transformed(&self, pose: &RigidPose) -> Self {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            intensity: self.intensity.clone(),
            channels: self.channels.clone(),
        }
    }
}

impl Transformable for Point3<f64> {
    fn transformed(&self, pose: &RigidPose) -> Self {
        pose.transform_point(self)
    }
}

/// Applies a rigid pose to a box or a cloud.
pub fn apply_pose<T: Transformable>(pose: &RigidPose, x: &T) -> T {
    x.transformed(pose)
}

/// Pose mapping world coordinates into the box frame (center at origin,
/// heading along +x).
pub fn to_canonical(b: &Box7) -> RigidPose {
    let rot = RigidPose::from_yaw(-b.yaw, Vector3::zeros());
    RigidPose {
        rotation: rot.rotation,
        translation: -(rot.rotation * b.center()),
    }
}

/// Inverse of [`to_canonical`]: box frame to world.
pub fn box_to_world(b: &Box7) -> RigidPose {
    RigidPose::from_yaw(b.yaw, b.center())
}

fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output: Vec<Vector2<f64>> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let edge = e1 - e0;
        let len = edge.norm();
        let dist = |p: &Vector2<f64>| (edge.x * (p.y - e0.y) - edge.y * (p.x - e0.x)) / len;
        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut d_prev = dist(&prev);
        for &cur in &input {
            let d_cur = dist(&cur);
            let cur_in = d_cur >= -CLIP_EPS;
            let prev_in = d_prev >= -CLIP_EPS;
            if cur_in {
                if !prev_in {
                    let t = d_prev / (d_prev - d_cur);
                    output.push(prev + (cur - prev) * t);
                }
                output.push(cur);
            } else if prev_in {
                let t = d_prev / (d_prev - d_cur);
                output.push(prev + (cur - prev) * t);
            }
            prev = cur;
            d_prev = d_cur;
        }
    }
    output
}

fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc.abs()
}

/// Orders a pair canonically so IoU is bitwise symmetric.
fn ordered<'a>(a: &'a Box7, b: &'a Box7) -> (&'a Box7, &'a Box7) {
    if a.total_cmp(b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Area of the intersection of the two BEV rectangles.
pub fn bev_intersection(a: &Box7, b: &Box7) -> f64 {
    let (a, b) = ordered(a, b);
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = 0.5 * (a.bev_diagonal() + b.bev_diagonal());
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    if area < MIN_INTERSECTION {
        0.0
    } else {
        area.min(a.bev_area()).min(b.bev_area())
    }
}

/// Intersection-over-union of the yaw-rotated footprints.
pub fn bev_iou(a: &Box7, b: &Box7) -> f64 {
    if a.same_footprint(b) {
        return 1.0;
    }
    let inter = bev_intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// 3D IoU: BEV intersection times vertical overlap over the union of volumes.
pub fn iou3d(a: &Box7, b: &Box7) -> f64 {
    let (a, b) = ordered(a, b);
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    if a.same_footprint(b) && a.cz == b.cz && a.h == b.h {
        return 1.0;
    }
    let inter = bev_intersection(a, b) * dz;
    if inter < MIN_INTERSECTION {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Indices of points strictly inside `b` enlarged by `margin` (half per side),
/// tested in the box frame.
pub fn crop_indices(b: &Box7, margin: [f64; 3], cloud: &PointCloud) -> Vec<usize> {
    let pose = to_canonical(b);
    let hx = 0.5 * (b.l + margin[0]);
    let hy = 0.5 * (b.w + margin[1]);
    let hz = 0.5 * (b.h + margin[2]);
    cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let q = pose.transform_point(p);
            (q.x.abs() < hx && q.y.abs() < hy && q.z.abs() < hz).then_some(i)
        })
        .collect()
}

/// Points strictly inside the box enlarged by `margin`.
pub fn crop_points(b: &Box7, margin: [f64; 3], cloud: &PointCloud) -> PointCloud {
    cloud.select(&crop_indices(b, margin, cloud))
}

/// Number of points strictly inside the box (no margin).
pub fn count_inside(b: &Box7, cloud: &PointCloud) -> usize {
    crop_indices(b, [0.0; 3], cloud).len()
}

/// Per-frame world-frame point clouds, looked up by frame index.
pub trait FrameSource {
    fn frame_cloud(&self, frame_index: u32) -> Option<&PointCloud>;
}

impl FrameSource for BTreeMap<u32, PointCloud> {
    fn frame_cloud(&self, frame_index: u32) -> Option<&PointCloud> {
        self.get(&frame_index)
    }
}

/// Slot `i` holds frame `i`.
impl FrameSource for [PointCloud] {
    fn frame_cloud(&self, frame_index: u32) -> Option<&PointCloud> {
        self.get(frame_index as usize)
    }
}

impl FrameSource for Vec<PointCloud> {
    fn frame_cloud(&self, frame_index: u32) -> Option<&PointCloud> {
        self.get(frame_index as usize)
    }
}
