//! Synthetic world: moving boxes, surface-sampled LiDAR frames and a noisy
//! detector derived from the ground truth.
//!
//! Every object exists for the whole sequence. It has a GT box only in frames
//! where it received at least one point, so far objects flicker in and out
//! of the labels the way sparse real objects do.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::assignment::{GtEntry, GtTrack};
use crate::error::{Error, Result};
use crate::geometry::{normalize_yaw, Box7, LabeledBox, ObjectClass, PointCloud, RigidPose};
use crate::rng::RngKey;
use crate::tracking::{DetectionFrame, SequenceDetections};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSpec {
    /// Objects per sequence, inclusive range.
    pub count: [u32; 2],
    /// Mean `[l, w, h]`.
    pub size: [f64; 3],
    /// Relative half-width of the uniform size spread.
    pub size_spread: f64,
    /// Speed range for moving objects, m/s.
    pub speed: [f64; 2],
    /// Point count that scores 0.5; sets the per-class score calibration.
    pub score_mid_points: f64,
}

impl Default for ClassSpec {
    fn default() -> Self {
        ClassSpec::vehicle()
    }
}

impl ClassSpec {
    pub fn vehicle() -> Self {
        Self { count: [8, 16], size: [4.5, 1.9, 1.6], size_spread: 0.1, speed: [2.0, 12.0], score_mid_points: 8.0 }
    }

    pub fn pedestrian() -> Self {
        Self { count: [4, 10], size: [0.8, 0.8, 1.75], size_spread: 0.1, speed: [0.5, 1.8], score_mid_points: 2.0 }
    }

    pub fn cyclist() -> Self {
        Self { count: [1, 4], size: [1.8, 0.7, 1.7], size_spread: 0.1, speed: [2.0, 6.0], score_mid_points: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassMix {
    pub vehicle: ClassSpec,
    pub pedestrian: ClassSpec,
    pub cyclist: ClassSpec,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self {
            vehicle: ClassSpec::vehicle(),
            pedestrian: ClassSpec::pedestrian(),
            cyclist: ClassSpec::cyclist(),
        }
    }
}

impl ClassMix {
    pub fn get(&self, c: ObjectClass) -> &ClassSpec {
        match c {
            ObjectClass::Vehicle => &self.vehicle,
            ObjectClass::Pedestrian => &self.pedestrian,
            ObjectClass::Cyclist => &self.cyclist,
        }
    }
}

/// Relative weights of the motion profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionMix {
    pub static_weight: f64,
    pub constant_velocity_weight: f64,
    pub turn_weight: f64,
    /// Yaw-rate magnitude range for turning objects, rad/s.
    pub turn_rate: [f64; 2],
}

impl Default for MotionMix {
    fn default() -> Self {
        Self { static_weight: 0.3, constant_velocity_weight: 0.5, turn_weight: 0.2, turn_rate: [0.05, 0.3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointModel {
    /// Expected points per square meter of the five visible faces at 10 m.
    pub density_at_10m: f64,
    /// No points beyond this range.
    pub max_range: f64,
    /// Distances below this count as this for the density.
    pub min_range: f64,
    /// Inward offset of sampled points from the faces.
    pub inset: f64,
    /// Gaussian noise on each point, meters.
    pub noise: f64,
    pub max_points: u32,
}

impl Default for PointModel {
    fn default() -> Self {
        Self { density_at_10m: 8.0, max_range: 75.0, min_range: 2.0, inset: 0.01, noise: 0.0, max_points: 4000 }
    }
}

impl PointModel {
    /// Expected point count for a box of size `[l, w, h]` at range `r`.
    pub fn expected_points(&self, size: [f64; 3], r: f64) -> f64 {
        if r > self.max_range {
            return 0.0;
        }
        let [l, w, h] = size;
        let area = l * w + 2.0 * l * h + 2.0 * w * h;
        let r = r.max(self.min_range);
        self.density_at_10m * area * (10.0 / r).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoise {
    /// Multiplies every jitter range; 0 reproduces GT boxes exactly.
    pub scale: f64,
    /// Center jitter half-widths as fractions of `[l, w, h]`, box frame.
    pub center: [f64; 3],
    pub size_lw: [f64; 2],
    pub size_h: [f64; 2],
    pub yaw: f64,
    /// Drop probability is `floor + (1 − floor)·exp(−n / points_scale)` for
    /// an object with `n` points.
    pub drop_floor: f64,
    pub drop_points_scale: f64,
    /// Score is a logistic in `ln(n + 1)` centered at the class's
    /// `score_mid_points`, with this slope.
    pub score_slope: f64,
    pub score_noise: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            scale: 0.25,
            center: [0.2, 0.2, 0.1],
            size_lw: [0.8, 1.2],
            size_h: [0.9, 1.1],
            yaw: 0.2,
            drop_floor: 0.02,
            drop_points_scale: 4.0,
            score_slope: 1.5,
            score_noise: 0.05,
        }
    }
}

impl DetectorNoise {
    pub fn drop_probability(&self, n: u32) -> f64 {
        if self.drop_points_scale <= 0.0 {
            return self.drop_floor;
        }
        self.drop_floor + (1.0 - self.drop_floor) * (-(n as f64) / self.drop_points_scale).exp()
    }

    /// Noise-free score for an object with `n` points.
    pub fn mean_score(&self, n: u32, mid_points: f64) -> f64 {
        let x = self.score_slope * (((n + 1) as f64).ln() - (mid_points + 1.0).ln());
        1.0 / (1.0 + (-x).exp())
    }
}

/// Detection gaps injected on top of the point-count drops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutModel {
    /// Probability that an object gets one occlusion window.
    pub occlusion_probability: f64,
    /// Window length range in frames, inclusive.
    pub occlusion_frames: [u32; 2],
    /// Detection-drop probability inside the window.
    pub occlusion_drop: f64,
    /// Frames after the first GT frame during which the detector stays
    /// blind, inclusive range.
    pub late_start_frames: [u32; 2],
    /// Frames before the last GT frame during which the detector is blind.
    pub early_end_frames: [u32; 2],
}

impl Default for DropoutModel {
    fn default() -> Self {
        Self {
            occlusion_probability: 0.3,
            occlusion_frames: [5, 20],
            occlusion_drop: 1.0,
            late_start_frames: [0, 15],
            early_end_frames: [0, 15],
        }
    }
}

impl DropoutModel {
    pub fn none() -> Self {
        Self {
            occlusion_probability: 0.0,
            occlusion_frames: [0, 0],
            occlusion_drop: 0.0,
            late_start_frames: [0, 0],
            early_end_frames: [0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_sequences: u32,
    pub frames_per_sequence: u32,
    pub hz: f64,
    /// Objects start at a range drawn uniformly in this interval.
    pub spawn_range: [f64; 2],
    /// Ego drives along +x at this speed.
    pub ego_speed: f64,
    pub classes: ClassMix,
    pub motion: MotionMix,
    pub points: PointModel,
    pub detector: DetectorNoise,
    pub dropout: DropoutModel,
    /// Expected false boxes per frame.
    pub clutter_per_frame: f64,
    /// Uniform score range of false boxes.
    pub clutter_score: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_sequences: 4,
            frames_per_sequence: 200,
            hz: 10.0,
            spawn_range: [5.0, 60.0],
            ego_speed: 0.0,
            classes: ClassMix::default(),
            motion: MotionMix::default(),
            points: PointModel::default(),
            detector: DetectorNoise::default(),
            dropout: DropoutModel::default(),
            clutter_per_frame: 0.0,
            clutter_score: [0.05, 0.6],
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} = {p} is not a probability")))
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: [T; 2]) -> Result<()> {
    if r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} = {r:?} is not an increasing range")))
    }
}

impl ScenarioConfig {
    /// Perfect detector: no jitter, no drops, no clutter.
    pub fn noiseless(mut self) -> Self {
        self.detector.scale = 0.0;
        self.detector.drop_floor = 0.0;
        self.detector.drop_points_scale = 0.0;
        self.detector.score_noise = 0.0;
        self.dropout = DropoutModel::none();
        self.clutter_per_frame = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_sequence == 0 {
            return Err(Error::Invalid("frames_per_sequence must be positive".into()));
        }
        if !(self.hz > 0.0) {
            return Err(Error::Invalid("hz must be positive".into()));
        }
        check_prob("detector.drop_floor", self.detector.drop_floor)?;
        check_prob("dropout.occlusion_probability", self.dropout.occlusion_probability)?;
        check_prob("dropout.occlusion_drop", self.dropout.occlusion_drop)?;
        check_range("spawn_range", self.spawn_range)?;
        check_range("dropout.occlusion_frames", self.dropout.occlusion_frames)?;
        check_range("dropout.late_start_frames", self.dropout.late_start_frames)?;
        check_range("dropout.early_end_frames", self.dropout.early_end_frames)?;
        check_range("detector.size_lw", self.detector.size_lw)?;
        check_range("detector.size_h", self.detector.size_h)?;
        check_range("motion.turn_rate", self.motion.turn_rate)?;
        check_range("clutter_score", self.clutter_score)?;
        for c in ObjectClass::ALL {
            let s = self.classes.get(c);
            check_range("count", s.count)?;
            check_range("speed", s.speed)?;
            if s.size.iter().any(|v| !(*v > 0.0)) || !(0.0..1.0).contains(&s.size_spread) {
                return Err(Error::Invalid(format!("{c} size spec is invalid")));
            }
        }
        let m = &self.motion;
        let w = [m.static_weight, m.constant_velocity_weight, m.turn_weight];
        if w.iter().any(|v| *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Invalid("motion weights must be non-negative with a positive sum".into()));
        }
        if self.points.density_at_10m < 0.0 || self.clutter_per_frame < 0.0 {
            return Err(Error::Invalid("densities must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Static,
    ConstantVelocity,
    Turn,
}

/// Planar motion in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub kind: MotionKind,
    pub x0: f64,
    pub y0: f64,
    pub yaw0: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

impl MotionProfile {
    /// `(x, y, yaw)` at time `t` seconds.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        match self.kind {
            MotionKind::Static => (self.x0, self.y0, self.yaw0),
            MotionKind::ConstantVelocity => (
                self.x0 + self.speed * t * self.yaw0.cos(),
                self.y0 + self.speed * t * self.yaw0.sin(),
                self.yaw0,
            ),
            MotionKind::Turn => {
                let (v, w, a) = (self.speed, self.yaw_rate, self.yaw0);
                let b = a + w * t;
                (self.x0 + v / w * (b.sin() - a.sin()), self.y0 - v / w * (b.cos() - a.cos()), b)
            }
        }
    }
}

/// Everything injected for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: u64,
    pub class: ObjectClass,
    pub size: [f64; 3],
    pub motion: MotionProfile,
    /// Half-open frame window.
    pub occlusion: Option<(u32, u32)>,
    pub late_start: u32,
    pub early_end: u32,
}

impl SimObject {
    pub fn box_at(&self, t: f64) -> Box7 {
        let (x, y, yaw) = self.motion.at(t);
        let [l, w, h] = self.size;
        Box7::new(x, y, 0.5 * h, l, w, h, yaw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSequence {
    pub detections: SequenceDetections,
    pub gt: Vec<GtTrack>,
    /// Slot `i` holds frame `i`, world coordinates.
    pub frames: Vec<PointCloud>,
    pub objects: Vec<SimObject>,
}

impl SimSequence {
    pub fn sequence_id(&self) -> &str {
        &self.detections.sequence_id
    }
}

pub fn sequence_name(index: u32) -> String {
    format!("seq_{index:04}")
}

/// `n` points uniformly on the five non-bottom faces of `b`, moved inward
/// by `inset`.
pub fn sample_box_surface<R: Rng + ?Sized>(b: &Box7, n: usize, inset: f64, rng: &mut R) -> Vec<Point3<f64>> {
    let (l, w, h) = (b.l, b.w, b.h);
    let faces = [l * w, l * h, l * h, w * h, w * h];
    let total: f64 = faces.iter().sum();
    let pose = RigidPose::from_yaw(b.yaw, b.center());
    let (hx, hy, hz) = (0.5 * l - inset, 0.5 * w - inset, 0.5 * h - inset);
    (0..n)
        .map(|_| {
            let mut u = rng.random_range(0.0..total);
            let mut k = 0;
            while k < 4 && u >= faces[k] {
                u -= faces[k];
                k += 1;
            }
            let a: f64 = rng.random_range(-1.0..1.0);
            let c: f64 = rng.random_range(-1.0..1.0);
            let local = match k {
                0 => Vector3::new(a * hx, c * hy, hz),
                1 => Vector3::new(a * hx, hy, c * hz),
                2 => Vector3::new(a * hx, -hy, c * hz),
                3 => Vector3::new(hx, a * hy, c * hz),
                _ => Vector3::new(-hx, a * hy, c * hz),
            };
            pose.transform_point(&Point3::from(local))
        })
        .collect()
}

fn uniform_u32<R: Rng>(rng: &mut R, r: [u32; 2]) -> u32 {
    rng.random_range(r[0]..=r[1])
}

fn uniform_f64<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn sym<R: Rng>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn spawn_objects(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<SimObject> {
    let duration = cfg.frames_per_sequence as f64 / cfg.hz;
    let mut objects: Vec<SimObject> = Vec::new();
    let m = &cfg.motion;
    let wsum = m.static_weight + m.constant_velocity_weight + m.turn_weight;
    for class in ObjectClass::ALL {
        let spec = cfg.classes.get(class);
        let n = uniform_u32(rng, spec.count);
        for _ in 0..n {
            let size = spec.size.map(|s| s * (1.0 + sym(rng, spec.size_spread)));
            let mut placed = None;
            // a few attempts at a non-colliding placement, then accept overlap
            for attempt in 0..20 {
                let r = uniform_f64(rng, cfg.spawn_range);
                let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let u = rng.random_range(0.0..wsum);
                let kind = if u < m.static_weight {
                    MotionKind::Static
                } else if u < m.static_weight + m.constant_velocity_weight {
                    MotionKind::ConstantVelocity
                } else {
                    MotionKind::Turn
                };
                let rate = uniform_f64(rng, m.turn_rate) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let motion = MotionProfile {
                    kind,
                    x0: r * th.cos(),
                    y0: r * th.sin(),
                    yaw0: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    speed: if kind == MotionKind::Static { 0.0 } else { uniform_f64(rng, spec.speed) },
                    yaw_rate: if kind == MotionKind::Turn && rate != 0.0 { rate } else { 0.0 },
                };
                let motion = if motion.kind == MotionKind::Turn && motion.yaw_rate == 0.0 {
                    MotionProfile { kind: MotionKind::ConstantVelocity, ..motion }
                } else {
                    motion
                };
                let cand = SimObject {
                    id: objects.len() as u64,
                    class,
                    size,
                    motion,
                    occlusion: None,
                    late_start: 0,
                    early_end: 0,
                };
                let radius = 0.5 * (size[0].hypot(size[1]));
                let clear = (0..=20).all(|k| {
                    let t = duration * k as f64 / 20.0;
                    let a = cand.box_at(t);
                    objects.iter().all(|o| {
                        let b = o.box_at(t);
                        let rb = 0.5 * o.size[0].hypot(o.size[1]);
                        (a.cx - b.cx).hypot(a.cy - b.cy) > radius + rb + 0.5
                    })
                });
                placed = Some(cand);
                if clear || attempt == 19 {
                    break;
                }
            }
            let mut o = placed.expect("at least one attempt");
            let d = &cfg.dropout;
            if rng.random_bool(d.occlusion_probability) {
                let len = uniform_u32(rng, d.occlusion_frames);
                let start = rng.random_range(0..cfg.frames_per_sequence);
                o.occlusion = Some((start, start.saturating_add(len)));
            }
            o.late_start = uniform_u32(rng, d.late_start_frames);
            o.early_end = uniform_u32(rng, d.early_end_frames);
            objects.push(o);
        }
    }
    objects
}

fn jitter_box<R: Rng>(b: &Box7, d: &DetectorNoise, rng: &mut R) -> Box7 {
    if d.scale == 0.0 {
        return *b;
    }
    let s = d.scale;
    let local = Vector3::new(sym(rng, s * d.center[0] * b.l), sym(rng, s * d.center[1] * b.w), sym(rng, s * d.center[2] * b.h));
    let c = b.center() + RigidPose::from_yaw(b.yaw, Vector3::zeros()).rotation * local;
    let f = |r: [f64; 2], rng: &mut R| 1.0 + s * (uniform_f64(rng, r) - 1.0);
    let sl = f(d.size_lw, rng);
    let sw = f(d.size_lw, rng);
    let sh = f(d.size_h, rng);
    Box7::new(c.x, c.y, c.z, b.l * sl, b.w * sw, b.h * sh, b.yaw + sym(rng, s * d.yaw))
}

/// One sequence, deterministic in `(cfg.seed, index)`.
pub fn generate_sequence(cfg: &ScenarioConfig, index: u32) -> Result<SimSequence> {
    cfg.validate()?;
    let mut rng = RngKey::new("sim").u64(cfg.seed).u64(index as u64).rng();
    let objects = spawn_objects(cfg, &mut rng);
    let nf = cfg.frames_per_sequence;
    let dt = 1.0 / cfg.hz;

    // points and GT presence first; detector decisions need the GT span
    let mut frames = Vec::with_capacity(nf as usize);
    let mut ego_poses = Vec::with_capacity(nf as usize);
    let mut counts = vec![vec![0u32; nf as usize]; objects.len()];
    for f in 0..nf {
        let t = f as f64 * dt;
        let ego = RigidPose::from_yaw(0.0, Vector3::new(cfg.ego_speed * t, 0.0, 0.0));
        let mut cloud = PointCloud::new();
        for (k, o) in objects.iter().enumerate() {
            let b = o.box_at(t);
            let r = (b.cx - ego.translation.x).hypot(b.cy - ego.translation.y);
            let lambda = cfg.points.expected_points(o.size, r);
            let n = if lambda > 0.0 {
                (Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32).min(cfg.points.max_points)
            } else {
                0
            };
            for p in sample_box_surface(&b, n as usize, cfg.points.inset, &mut rng) {
                let p = if cfg.points.noise > 0.0 {
                    let sd = cfg.points.noise;
                    let g = rand_distr::Normal::new(0.0, sd).expect("finite sigma");
                    Point3::new(p.x + g.sample(&mut rng), p.y + g.sample(&mut rng), p.z + g.sample(&mut rng))
                } else {
                    p
                };
                cloud.push(p, rng.random_range(0.0..1.0));
            }
            counts[k][f as usize] = n;
        }
        frames.push(cloud);
        ego_poses.push(ego);
    }

    let mut gt = Vec::new();
    let mut dets: Vec<Vec<LabeledBox>> = vec![Vec::new(); nf as usize];
    let d = &cfg.detector;
    for (k, o) in objects.iter().enumerate() {
        let present: Vec<u32> = (0..nf).filter(|&f| counts[k][f as usize] > 0).collect();
        let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
            continue;
        };
        let mut entries = Vec::with_capacity(present.len());
        for &f in &present {
            let n = counts[k][f as usize];
            let b = o.box_at(f as f64 * dt);
            entries.push(GtEntry { frame_index: f, bbox: b, num_points: n });
            let blind = f < first + o.late_start || f + o.early_end > last;
            let occluded = o.occlusion.is_some_and(|(a, z)| (a..z).contains(&f));
            let mut drop = blind || rng.random_bool(d.drop_probability(n).clamp(0.0, 1.0));
            if occluded && rng.random_bool(cfg.dropout.occlusion_drop) {
                drop = true;
            }
            if drop {
                continue;
            }
            let score = (d.mean_score(n, cfg.classes.get(o.class).score_mid_points) + sym(&mut rng, d.score_noise)).clamp(0.01, 0.99);
            dets[f as usize].push(LabeledBox { bbox: jitter_box(&b, d, &mut rng), class: o.class, score, frame_index: f });
        }
        gt.push(GtTrack { gt_track_id: o.id, class: o.class, entries });
    }

    if cfg.clutter_per_frame > 0.0 {
        let pois = Poisson::new(cfg.clutter_per_frame).expect("positive rate");
        for (f, list) in dets.iter_mut().enumerate() {
            let n = pois.sample(&mut rng) as usize;
            for _ in 0..n {
                let class = ObjectClass::ALL[rng.random_range(0..3)];
                let [l, w, h] = cfg.classes.get(class).size;
                let r = uniform_f64(&mut rng, cfg.spawn_range);
                let th: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let ego = ego_poses[f].translation;
                let bbox = Box7::new(ego.x + r * th.cos(), ego.y + r * th.sin(), 0.5 * h, l, w, h, normalize_yaw(th));
                let score = uniform_f64(&mut rng, cfg.clutter_score);
                list.push(LabeledBox { bbox, class, score, frame_index: f as u32 });
            }
        }
    }

    let detections = SequenceDetections {
        sequence_id: sequence_name(index),
        frames: dets
            .into_iter()
            .zip(&ego_poses)
            .enumerate()
            .map(|(f, (detections, ego))| DetectionFrame {
                frame_index: f as u32,
                timestamp: f as f64 * dt,
                ego_pose: *ego,
                detections,
            })
            .collect(),
    };
    Ok(SimSequence { detections, gt, frames, objects })
}

/// All sequences of a scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<SimSequence>> {
    (0..cfg.num_sequences).map(|i| generate_sequence(cfg, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanStats {
    pub count: usize,
    pub min: u32,
    pub max: u32,
    pub mean: f64,
}

impl SpanStats {
    fn from(v: &[u32]) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        Self {
            count: v.len(),
            min: *v.iter().min().expect("non-empty"),
            max: *v.iter().max().expect("non-empty"),
            mean: v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64,
        }
    }
}

/// What the generated corpus contains, for reading test thresholds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scorecard {
    pub num_sequences: usize,
    pub num_objects: usize,
    pub num_gt_tracks: usize,
    pub num_gt_boxes: usize,
    pub num_detections: usize,
    /// `(class, gt tracks, gt boxes)`.
    pub per_class: Vec<(ObjectClass, usize, usize)>,
    /// 10th, 25th, 50th, 75th and 90th percentile of GT point counts.
    pub point_quantiles: [u32; 5],
    pub mean_points: f64,
    /// GT boxes with no detection.
    pub missed_boxes: usize,
    /// Share of missed boxes with fewer than 5 points.
    pub low_point_miss_share: f64,
    pub occlusion_spans: SpanStats,
    pub late_start: SpanStats,
    pub early_end: SpanStats,
    /// GT tracks spanning fewer than `short_track_frames` frames.
    pub short_track_fraction: f64,
    pub short_track_frames: u32,
}

pub fn scorecard(seqs: &[SimSequence], short_track_frames: u32) -> Scorecard {
    let mut sc = Scorecard { num_sequences: seqs.len(), short_track_frames, ..Default::default() };
    let mut points = Vec::new();
    let mut occl = Vec::new();
    let mut late = Vec::new();
    let mut early = Vec::new();
    let mut short = 0usize;
    let mut low_missed = 0usize;
    let mut per_class = [(0usize, 0usize); 3];
    for s in seqs {
        sc.num_objects += s.objects.len();
        for o in &s.objects {
            if let Some((a, z)) = o.occlusion {
                occl.push(z - a);
            }
            late.push(o.late_start);
            early.push(o.early_end);
        }
        for f in &s.detections.frames {
            sc.num_detections += f.detections.len();
        }
        for g in &s.gt {
            sc.num_gt_tracks += 1;
            sc.num_gt_boxes += g.entries.len();
            let slot = &mut per_class[ObjectClass::ALL.iter().position(|c| *c == g.class).expect("known class")];
            slot.0 += 1;
            slot.1 += g.entries.len();
            let span = g.entries.last().map_or(0, |e| e.frame_index) - g.entries.first().map_or(0, |e| e.frame_index) + 1;
            short += (span < short_track_frames) as usize;
            for e in &g.entries {
                points.push(e.num_points);
                let frame = &s.detections.frames[e.frame_index as usize];
                let hit = frame.detections.iter().any(|d| d.class == g.class && crate::geometry::iou3d(&d.bbox, &e.bbox) > 0.0);
                if !hit {
                    sc.missed_boxes += 1;
                    low_missed += (e.num_points < 5) as usize;
                }
            }
        }
    }
    sc.per_class = ObjectClass::ALL.iter().zip(per_class).map(|(c, (t, b))| (*c, t, b)).collect();
    points.sort_unstable();
    if !points.is_empty() {
        let q = |p: f64| points[((points.len() - 1) as f64 * p).round() as usize];
        sc.point_quantiles = [q(0.1), q(0.25), q(0.5), q(0.75), q(0.9)];
        sc.mean_points = points.iter().map(|&x| x as f64).sum::<f64>() / points.len() as f64;
    }
    sc.low_point_miss_share = if sc.missed_boxes == 0 { 0.0 } else { low_missed as f64 / sc.missed_boxes as f64 };
    sc.occlusion_spans = SpanStats::from(&occl);
    sc.late_start = SpanStats::from(&late);
    sc.early_end = SpanStats::from(&early);
    sc.short_track_fraction = if sc.num_gt_tracks == 0 { 0.0 } else { short as f64 / sc.num_gt_tracks as f64 };
    sc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::count_inside;

    fn small() -> ScenarioConfig {
        ScenarioConfig { num_sequences: 2, frames_per_sequence: 60, ..Default::default() }
    }

    #[test]
    fn noiseless_detections_equal_gt() {
        let s = generate_sequence(&small().noiseless(), 0).unwrap();
        let mut n = 0;
        for g in &s.gt {
            for e in &g.entries {
                let f = &s.detections.frames[e.frame_index as usize];
                assert!(f.detections.iter().any(|d| d.bbox == e.bbox && d.class == g.class));
                n += 1;
            }
        }
        let total: usize = s.detections.frames.iter().map(|f| f.detections.len()).sum();
        assert_eq!(total, n);
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_sequence(&small(), 1).unwrap();
        let b = generate_sequence(&small(), 1).unwrap();
        assert_eq!(a, b);
        let c = generate_sequence(&ScenarioConfig { seed: 9, ..small() }, 1).unwrap();
        assert_ne!(a.detections, c.detections);
    }

    #[test]
    fn occlusion_window_with_certain_drop_is_empty() {
        let mut cfg = small();
        cfg.dropout.occlusion_probability = 1.0;
        cfg.dropout.occlusion_drop = 1.0;
        cfg.dropout.occlusion_frames = [10, 10];
        let s = generate_sequence(&cfg, 0).unwrap();
        for o in &s.objects {
            let (a, z) = o.occlusion.unwrap();
            assert_eq!(z - a, 10);
            let Some(g) = s.gt.iter().find(|g| g.gt_track_id == o.id) else { continue };
            for f in a..z.min(cfg.frames_per_sequence) {
                if let Some(e) = g.entry_at(f) {
                    let fr = &s.detections.frames[f as usize];
                    assert!(fr.detections.iter().all(|d| d.class != g.class || crate::geometry::iou3d(&d.bbox, &e.bbox) == 0.0));
                }
            }
        }
        let sc = scorecard(&[s], 20);
        assert_eq!((sc.occlusion_spans.min, sc.occlusion_spans.max), (10, 10));
    }

    #[test]
    fn gt_exists_only_with_points() {
        let s = generate_sequence(&small(), 0).unwrap();
        for g in &s.gt {
            for e in &g.entries {
                assert!(e.num_points > 0);
                assert_eq!(count_inside(&e.bbox, &s.frames[e.frame_index as usize]) as u32, e.num_points);
            }
        }
    }

    #[test]
    fn static_world_has_no_short_tracks() {
        let mut cfg = small();
        cfg.motion = MotionMix { static_weight: 1.0, constant_velocity_weight: 0.0, turn_weight: 0.0, ..Default::default() };
        cfg.spawn_range = [5.0, 30.0];
        let seqs = generate(&cfg).unwrap();
        let sc = scorecard(&seqs, 20);
        assert_eq!(sc.short_track_fraction, 0.0);
        assert_eq!(sc.num_gt_tracks, sc.num_objects);
    }

    #[test]
    fn point_counts_follow_the_range_curve() {
        let mut cfg = ScenarioConfig { frames_per_sequence: 400, ..Default::default() }.noiseless();
        cfg.classes.vehicle.count = [1, 1];
        cfg.classes.vehicle.size_spread = 0.0;
        cfg.classes.pedestrian.count = [0, 0];
        cfg.classes.cyclist.count = [0, 0];
        cfg.motion = MotionMix { static_weight: 1.0, constant_velocity_weight: 0.0, turn_weight: 0.0, ..Default::default() };
        cfg.spawn_range = [20.0, 20.0];
        let s = generate_sequence(&cfg, 0).unwrap();
        let lambda = cfg.points.expected_points(cfg.classes.vehicle.size, 20.0);
        let sc = scorecard(std::slice::from_ref(&s), 20);
        assert_eq!(sc.num_gt_boxes, 400);
        // mean of 400 Poisson draws: 4 standard errors
        assert!((sc.mean_points - lambda).abs() < 4.0 * (lambda / 400.0).sqrt(), "{} vs {lambda}", sc.mean_points);
        assert!(sc.point_quantiles[0] as f64 > lambda - 3.0 * lambda.sqrt());
    }

    #[test]
    fn turn_motion_is_continuous_and_on_a_circle() {
        let m = MotionProfile { kind: MotionKind::Turn, x0: 1.0, y0: 2.0, yaw0: 0.3, speed: 5.0, yaw_rate: 0.2 };
        let r = 5.0 / 0.2;
        let cx = 1.0 - r * 0.3f64.sin();
        let cy = 2.0 + r * 0.3f64.cos();
        for k in 0..50 {
            let (x, y, _) = m.at(k as f64 * 0.37);
            assert!(((x - cx).hypot(y - cy) - r).abs() < 1e-9);
        }
        assert_eq!(m.at(0.0), (1.0, 2.0, 0.3));
    }

    #[test]
    fn surface_samples_are_inside() {
        let mut rng = RngKey::new("t").rng();
        let b = Box7::new(3.0, -1.0, 0.8, 4.5, 1.9, 1.6, 2.0);
        let pts = sample_box_surface(&b, 500, 0.01, &mut rng);
        assert_eq!(count_inside(&b, &PointCloud::from_points(pts)), 500);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small();
        c.frames_per_sequence = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.dropout.occlusion_drop = 1.5;
        assert!(c.validate().is_err());
    }
}
