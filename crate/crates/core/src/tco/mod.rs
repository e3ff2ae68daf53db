//! Track coherence optimization.
//!
//! All boxes of a rigid track share the base frame's size. Each frame's
//! object points are cut out and mapped into that frame's box coordinates,
//! then registered against each other by ICP and a sparse pose graph. A
//! frame keeps its registration pose only if it improves the Chamfer
//! distance to its temporal neighbors, and the box is moved by the inverse of
//! that pose.

mod icp;
mod pose_graph;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_pose, box_to_world, crop_points, normalize_yaw, to_canonical, Box7, FrameSource, ObjectClass, PointCloud,
    RigidPose,
};
use crate::spatial::KdTree;
use crate::tracking::{Origin, Tracklet};

pub use icp::{icp_p2p, icp_with_tree, kabsch, IcpConfig, IcpResult};
pub use pose_graph::{
    build_edges, graph_objective, optimize_edges, optimize_pose_graph, PoseGraphConfig, PoseGraphEdge,
    PoseGraphSolution,
};

#[cfg(test)]
pub(crate) use icp::tests::car_shell;

/// One frame's object shape in its own box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeNode {
    pub frame_index: u32,
    /// Position of the frame in the track's entries.
    pub entry_index: usize,
    pub points: PointCloud,
    /// Maps this node's points toward the base node's shape.
    pub pose: RigidPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseQuality {
    pub frame_index: u32,
    /// Neighbor Chamfer distance of the raw shapes (meters).
    pub q: f64,
    /// Neighbor Chamfer distance after registration (meters).
    pub q_prime: f64,
    pub delta_q: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcoConfig {
    /// Frames need strictly more cropped points than this.
    pub min_points: usize,
    /// Total crop expansion along the box height (meters).
    pub height_margin: f64,
    /// Total crop expansion along length and width (meters).
    pub lateral_margin: f64,
    pub allow_pedestrian: bool,
    /// Extract-register-apply rounds; each round crops with the boxes the
    /// previous one produced.
    pub passes: usize,
    pub icp: IcpConfig,
    pub graph: PoseGraphConfig,
}

impl Default for TcoConfig {
    fn default() -> Self {
        Self {
            min_points: 60,
            height_margin: 1.0,
            lateral_margin: 0.0,
            allow_pedestrian: false,
            passes: 3,
            icp: IcpConfig::default(),
            graph: PoseGraphConfig::default(),
        }
    }
}

/// Which frame anchors the registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseFrame {
    /// Detected frame with the most cropped points.
    Auto,
    Frame(u32),
    /// Frame with a trusted replacement box.
    Annotated { frame_index: u32, bbox: Box7 },
}

/// Copies the size of entry `base_idx` to every entry.
pub fn align_sizes(track: &Tracklet, base_idx: usize) -> Result<Tracklet> {
    let base = track
        .entries
        .get(base_idx)
        .ok_or_else(|| Error::Invalid(format!("base index {base_idx} out of range")))?
        .bbox;
    let mut out = track.clone();
    for e in &mut out.entries {
        e.bbox.l = base.l;
        e.bbox.w = base.w;
        e.bbox.h = base.h;
    }
    Ok(out)
}

/// Cuts each frame's points with the height-expanded box and keeps frames
/// with more than `min_points` points, in canonical box coordinates.
pub fn extract_shapes<F: FrameSource + ?Sized>(track: &Tracklet, frames: &F, cfg: &TcoConfig) -> Result<Vec<ShapeNode>> {
    let margin = [cfg.lateral_margin, cfg.lateral_margin, cfg.height_margin];
    let nodes: Vec<ShapeNode> = track
        .entries
        .iter()
        .enumerate()
        .filter_map(|(k, e)| {
            let cloud = frames.frame_cloud(e.frame_index)?;
            let crop = crop_points(&e.bbox, margin, cloud);
            (crop.len() > cfg.min_points).then(|| ShapeNode {
                frame_index: e.frame_index,
                entry_index: k,
                points: apply_pose(&to_canonical(&e.bbox), &crop),
                pose: RigidPose::identity(),
            })
        })
        .collect();
    if nodes.len() < 2 {
        return Err(Error::InsufficientShapes(nodes.len()));
    }
    Ok(nodes)
}

fn mean_nn(from: &[Point3<f64>], tree: &KdTree) -> f64 {
    from.iter().map(|p| tree.nearest(p).map_or(0.0, |(_, d2)| d2.sqrt())).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance: mean nearest-neighbor distance each way,
/// summed.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_points(&a.points, &b.points)
}

pub fn chamfer_points(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    Ok(mean_nn(a, &tb) + mean_nn(b, &ta))
}

/// Mean Chamfer distance from each node to its temporal neighbors (one
/// neighbor at either end).
fn neighbor_quality(shapes: &[Vec<Point3<f64>>]) -> Result<Vec<f64>> {
    let trees: Vec<KdTree> = shapes.iter().map(|s| KdTree::new(s)).collect();
    let cd = |i: usize, j: usize| -> f64 { mean_nn(&shapes[i], &trees[j]) + mean_nn(&shapes[j], &trees[i]) };
    if shapes.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptyCloud);
    }
    let n = shapes.len();
    let pair: Vec<f64> = (0..n.saturating_sub(1)).map(|i| cd(i, i + 1)).collect();
    Ok((0..n)
        .map(|i| match (i.checked_sub(1).map(|p| pair[p]), pair.get(i)) {
            (Some(a), Some(&b)) => 0.5 * (a + b),
            (Some(a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => 0.0,
        })
        .collect())
}

/// Applies retained registration poses to the track's boxes.
///
/// `poses[k]` belongs to `nodes[k]`. A box moves to `B ∘ M⁻¹` where `B` is
/// its box-to-world pose; sizes are never touched.
pub fn gate_and_apply(
    track: &Tracklet,
    nodes: &[ShapeNode],
    poses: &[RigidPose],
) -> Result<(Tracklet, Vec<PoseQuality>)> {
    if nodes.len() != poses.len() {
        return Err(Error::Invalid("one pose per node required".into()));
    }
    let raw: Vec<Vec<Point3<f64>>> = nodes.iter().map(|n| n.points.points.clone()).collect();
    let warped: Vec<Vec<Point3<f64>>> = nodes
        .iter()
        .zip(poses)
        .map(|(n, m)| n.points.points.iter().map(|p| m.transform_point(p)).collect())
        .collect();
    let q = neighbor_quality(&raw)?;
    let q_prime = neighbor_quality(&warped)?;
    let mut out = track.clone();
    let mut report = Vec::with_capacity(nodes.len());
    for (k, node) in nodes.iter().enumerate() {
        let delta_q = q[k] - q_prime[k];
        let retained = delta_q > 0.0;
        if retained {
            let e = &mut out.entries[node.entry_index];
            let moved = box_to_world(&e.bbox).compose(&poses[k].inverse());
            e.bbox = Box7 {
                cx: moved.translation.x,
                cy: moved.translation.y,
                cz: moved.translation.z,
                yaw: normalize_yaw(moved.yaw()),
                ..e.bbox
            };
        }
        report.push(PoseQuality {
            frame_index: node.frame_index,
            q: q[k],
            q_prime: q_prime[k],
            delta_q,
            retained,
        });
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcoPass {
    pub quality: Vec<PoseQuality>,
    pub solution: PoseGraphSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcoOutcome {
    pub track: Tracklet,
    pub base_frame: u32,
    pub passes: Vec<TcoPass>,
}

impl TcoOutcome {
    /// Frames moved by at least one pass, ascending.
    pub fn retained_frames(&self) -> Vec<u32> {
        let mut f: Vec<u32> = self
            .passes
            .iter()
            .flat_map(|p| p.quality.iter().filter(|q| q.retained).map(|q| q.frame_index))
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Full per-track optimization.
///
/// Later passes stop early once a pass retains nothing.
pub fn run_tco<F: FrameSource + ?Sized>(
    track: &Tracklet,
    frames: &F,
    base: BaseFrame,
    cfg: &TcoConfig,
) -> Result<TcoOutcome> {
    if track.entries.is_empty() {
        return Err(Error::EmptyTrack(track.track_id));
    }
    if track.class == ObjectClass::Pedestrian && !cfg.allow_pedestrian {
        return Err(Error::Invalid(format!("track {}: pedestrians are not rigid", track.track_id)));
    }
    let mut work = track.clone();
    let base_idx = match base {
        BaseFrame::Auto => auto_base(track, frames, cfg)?,
        BaseFrame::Frame(f) => entry_index(track, f)?,
        BaseFrame::Annotated { frame_index, bbox } => {
            let k = entry_index(track, frame_index)?;
            work.entries[k].bbox = bbox;
            k
        }
    };
    let base_frame = work.entries[base_idx].frame_index;
    let mut current = align_sizes(&work, base_idx)?;
    let mut passes = Vec::new();
    for _ in 0..cfg.passes.max(1) {
        let nodes = extract_shapes(&current, frames, cfg)?;
        let base_node = nodes
            .iter()
            .position(|n| n.entry_index == base_idx)
            .ok_or_else(|| Error::Invalid(format!("base frame {base_frame} has too few points")))?;
        let solution = optimize_pose_graph(&nodes, base_node, &cfg.graph, &cfg.icp)?;
        let (next, quality) = gate_and_apply(&current, &nodes, &solution.poses)?;
        current = next;
        let any = quality.iter().any(|q| q.retained);
        passes.push(TcoPass { quality, solution });
        if !any {
            break;
        }
    }
    Ok(TcoOutcome {
        track: current,
        base_frame,
        passes,
    })
}

fn entry_index(track: &Tracklet, frame: u32) -> Result<usize> {
    track
        .entries
        .binary_search_by_key(&frame, |e| e.frame_index)
        .map_err(|_| Error::Invalid(format!("track {} has no frame {frame}", track.track_id)))
}

fn auto_base<F: FrameSource + ?Sized>(track: &Tracklet, frames: &F, cfg: &TcoConfig) -> Result<usize> {
    let margin = [cfg.lateral_margin, cfg.lateral_margin, cfg.height_margin];
    track
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.origin == Origin::Detected)
        .map(|(k, e)| {
            let n = frames
                .frame_cloud(e.frame_index)
                .map_or(0, |c| crop_points(&e.bbox, margin, c).len());
            (k, n)
        })
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .ok_or(Error::InsufficientShapes(0))
}
