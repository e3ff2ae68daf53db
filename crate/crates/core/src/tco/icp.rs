//! Point-to-point ICP with closed-form rigid fits.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidPose};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    /// Correspondences farther apart than this are ignored (meters).
    pub max_corr: f64,
    pub max_iter: usize,
    /// Stop once the increment's rotation angle plus translation norm falls
    /// below this.
    pub tol: f64,
    /// Pairs farther apart than this multiple of the median pair distance
    /// are dropped; 0 disables the cut.
    pub reject_factor: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_corr: 2.0,
            max_iter: 50,
            tol: 1e-6,
            reject_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub pose: RigidPose,
    pub iterations: usize,
    pub converged: bool,
    /// Correspondences in the last iteration.
    pub correspondences: usize,
    /// Root mean square correspondence distance before the last fit.
    pub rmse: f64,
}

/// Least-squares rigid transform taking `src[k]` onto `dst[k]`.
///
/// Returns identity for fewer than one pair.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> RigidPose {
    debug_assert_eq!(src.len(), dst.len());
    if src.is_empty() {
        return RigidPose::identity();
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if sign == 0.0 { 1.0 } else { sign }));
    let r = v * fix * u.transpose();
    RigidPose::new(r, cd - r * cs)
}

/// Indices of pairs kept by the median-distance cut.
pub(crate) fn inlier_mask(d2: &[f64], factor: f64) -> Vec<bool> {
    if factor <= 0.0 || d2.is_empty() {
        return vec![true; d2.len()];
    }
    let mut sorted = d2.to_vec();
    let mid = sorted.len() / 2;
    let (_, med, _) = sorted.select_nth_unstable_by(mid, f64::total_cmp);
    let cut = *med * factor * factor;
    d2.iter().map(|&d| d <= cut).collect()
}

/// Aligns `source` to `target`.
pub fn icp_p2p(source: &PointCloud, target: &PointCloud, cfg: &IcpConfig) -> Result<RigidPose> {
    let tree = KdTree::new(&target.points);
    icp_with_tree(&source.points, &target.points, &tree, cfg).map(|r| r.pose)
}

/// ICP against a prebuilt tree over `target`.
pub fn icp_with_tree(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    tree: &KdTree,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut pose = RigidPose::identity();
    let mut result = IcpResult {
        pose,
        iterations: 0,
        converged: false,
        correspondences: 0,
        rmse: 0.0,
    };
    let mut pairs = Vec::with_capacity(source.len());
    let mut d2s = Vec::with_capacity(source.len());
    let mut moved = Vec::with_capacity(source.len());
    let mut matched = Vec::with_capacity(source.len());
    for it in 0..cfg.max_iter {
        pairs.clear();
        d2s.clear();
        for p in source {
            let q = pose.transform_point(p);
            if let Some((j, d2)) = tree.nearest_within(&q, cfg.max_corr) {
                pairs.push((q, target[j]));
                d2s.push(d2);
            }
        }
        moved.clear();
        matched.clear();
        let mut sq = 0.0;
        for ((pair, d2), keep) in pairs.iter().zip(&d2s).zip(inlier_mask(&d2s, cfg.reject_factor)) {
            if keep {
                moved.push(pair.0);
                matched.push(pair.1);
                sq += d2;
            }
        }
        if moved.is_empty() {
            if it == 0 {
                return Err(Error::NoOverlap(cfg.max_corr));
            }
            break;
        }
        let step = kabsch(&moved, &matched);
        pose = step.compose(&pose).renormalized();
        result = IcpResult {
            pose,
            iterations: it + 1,
            converged: false,
            correspondences: moved.len(),
            rmse: (sq / moved.len() as f64).sqrt(),
        };
        if step.angle() + step.translation.norm() < cfg.tol {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}
