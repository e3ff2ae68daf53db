//! Sparse multi-way registration over a track's shape nodes.
//!
//! Minimizes `Σ_edges Σ_(p,q)∈K_ij ||M_i p − M_j q||²` by Gauss-Newton with
//! left-multiplied pose increments. The base node is held at identity.

use nalgebra::{Matrix3, Point3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::icp::{icp_with_tree, inlier_mask, IcpConfig};
use super::ShapeNode;
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::spatial::KdTree;

type Mat6 = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;
type Jac = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGraphConfig {
    /// Each node connects to this many predecessors and successors.
    pub k: usize,
    pub max_iter: usize,
    /// Stop once every pose increment norm is below this.
    pub tol: f64,
}

impl Default for PoseGraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            max_iter: 10,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphEdge {
    pub i: usize,
    pub j: usize,
    /// ICP estimate taking node `i`'s points onto node `j`'s.
    pub transform: RigidPose,
    /// `(index in i, index in j)` pairs.
    pub correspondences: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphSolution {
    pub poses: Vec<RigidPose>,
    pub edges: Vec<PoseGraphEdge>,
    pub iterations: usize,
    pub objective_initial: f64,
    pub objective_final: f64,
}

/// Edges between nodes at most `k` apart in node order, with ICP transforms
/// and nearest-neighbor correspondences under them. Pairs without overlap
/// get no edge.
pub fn build_edges(nodes: &[ShapeNode], k: usize, icp: &IcpConfig) -> Result<Vec<PoseGraphEdge>> {
    let trees: Vec<KdTree> = nodes.iter().map(|n| KdTree::new(&n.points.points)).collect();
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len().min(i + k + 1) {
            let res = match icp_with_tree(&nodes[i].points.points, &nodes[j].points.points, &trees[j], icp) {
                Ok(r) => r,
                Err(Error::NoOverlap(_)) => continue,
                Err(e) => return Err(e),
            };
            let correspondences = edge_pairs(&nodes[i].points.points, &nodes[j].points.points, &trees[i], &trees[j], &res.pose, icp);
            if !correspondences.is_empty() {
                edges.push(PoseGraphEdge {
                    i,
                    j,
                    transform: res.pose,
                    correspondences,
                });
            }
        }
    }
    Ok(edges)
}

/// Nearest-neighbor pairs under `t` (taking `pi` onto `pj`), searched from
/// both sides so neither shape's sampling biases the set.
fn edge_pairs(
    pi: &[Point3<f64>],
    pj: &[Point3<f64>],
    ti: &KdTree,
    tj: &KdTree,
    t: &RigidPose,
    icp: &IcpConfig,
) -> Vec<(usize, usize)> {
    let inv = t.inverse();
    let mut pairs = Vec::new();
    let mut d2s = Vec::new();
    for (a, p) in pi.iter().enumerate() {
        if let Some((b, d2)) = tj.nearest_within(&t.transform_point(p), icp.max_corr) {
            pairs.push((a, b));
            d2s.push(d2);
        }
    }
    for (b, q) in pj.iter().enumerate() {
        if let Some((a, d2)) = ti.nearest_within(&inv.transform_point(q), icp.max_corr) {
            pairs.push((a, b));
            d2s.push(d2);
        }
    }
    let keep = inlier_mask(&d2s, icp.reject_factor);
    let mut out: Vec<(usize, usize)> = pairs.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Registration objective for the given poses.
pub fn graph_objective(nodes: &[ShapeNode], edges: &[PoseGraphEdge], poses: &[RigidPose]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let (pi, pj) = (&nodes[e.i].points.points, &nodes[e.j].points.points);
            e.correspondences
                .iter()
                .map(|&(a, b)| (poses[e.i].transform_point(&pi[a]) - poses[e.j].transform_point(&pj[b])).norm_squared())
                .sum::<f64>()
        })
        .sum()
}

/// Nodes reachable from `base` over `edges`.
fn component(n: usize, edges: &[PoseGraphEdge], base: usize) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![base];
    seen[base] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn jacobian(x: &Point3<f64>, sign: f64) -> Jac {
    let mut j = Jac::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-sign * skew(&x.coords)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(sign * Matrix3::identity()));
    j
}

/// Symmetric positive definite banded matrix stored as its lower band.
struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.bw);
        &mut self.data[i * (self.bw + 1) + (i - j)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    /// In-place Cholesky; `None` if not positive definite.
    fn factor(mut self) -> Option<Self> {
        for i in 0..self.n {
            for j in i.saturating_sub(self.bw)..=i {
                let lo = i.saturating_sub(self.bw).max(j.saturating_sub(self.bw));
                let mut s = self.get(i, j);
                for k in lo..j {
                    s -= self.get(i, k) * self.get(j, k);
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    *self.at(i, i) = s.sqrt();
                } else {
                    *self.at(i, j) = s / self.get(j, j);
                }
            }
        }
        Some(self)
    }

    fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.get(i, k) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..self.n.min(i + self.bw + 1) {
                s -= self.get(k, i) * b[k];
            }
            b[i] = s / self.get(i, i);
        }
    }
}

/// Solves for node poses given fixed edges. Nodes outside the base node's
/// connected component stay at identity.
pub fn optimize_edges(
    nodes: &[ShapeNode],
    edges: Vec<PoseGraphEdge>,
    base: usize,
    cfg: &PoseGraphConfig,
) -> Result<PoseGraphSolution> {
    let n = nodes.len();
    if n < 2 {
        return Err(Error::InsufficientShapes(n));
    }
    if base >= n {
        return Err(Error::Invalid(format!("base node {base} out of range for {n} nodes")));
    }
    let mut poses: Vec<RigidPose> = nodes.iter().map(|nd| nd.pose).collect();
    poses[base] = RigidPose::identity();
    let objective_initial = graph_objective(nodes, &edges, &poses);

    let reach = component(n, &edges, base);
    let mut var = vec![usize::MAX; n];
    let mut nv = 0;
    for v in 0..n {
        if reach[v] && v != base {
            var[v] = nv;
            nv += 1;
        }
    }
    for v in 0..n {
        if !reach[v] {
            poses[v] = RigidPose::identity();
        }
    }
    let active: Vec<&PoseGraphEdge> = edges.iter().filter(|e| reach[e.i]).collect();
    let band_blocks = active
        .iter()
        .filter(|e| var[e.i] != usize::MAX && var[e.j] != usize::MAX)
        .map(|e| var[e.i].abs_diff(var[e.j]))
        .max()
        .unwrap_or(0);
    let dim = 6 * nv;
    let bw = 6 * band_blocks + 5;

    let mut iterations = 0;
    while nv > 0 && iterations < cfg.max_iter {
        iterations += 1;
        let mut h = Banded::new(dim, bw);
        let mut g = vec![0.0; dim];
        for e in &active {
            let (pi, pj) = (&nodes[e.i].points.points, &nodes[e.j].points.points);
            let (vi, vj) = (var[e.i], var[e.j]);
            let mut hii = Mat6::zeros();
            let mut hjj = Mat6::zeros();
            let mut hij = Mat6::zeros();
            let mut gi = Vec6::zeros();
            let mut gj = Vec6::zeros();
            for &(a, b) in &e.correspondences {
                let x = poses[e.i].transform_point(&pi[a]);
                let y = poses[e.j].transform_point(&pj[b]);
                let r = x - y;
                let ji = jacobian(&x, 1.0);
                let jj = jacobian(&y, -1.0);
                hii += ji.transpose() * ji;
                hjj += jj.transpose() * jj;
                hij += ji.transpose() * jj;
                gi += ji.transpose() * r;
                gj += jj.transpose() * r;
            }
            let mut add_block = |vr: usize, vc: usize, m: &Mat6| {
                for r in 0..6 {
                    for c in 0..6 {
                        let (gr, gc) = (6 * vr + r, 6 * vc + c);
                        if gc <= gr {
                            *h.at(gr, gc) += m[(r, c)];
                        }
                    }
                }
            };
            if vi != usize::MAX {
                add_block(vi, vi, &hii);
            }
            if vj != usize::MAX {
                add_block(vj, vj, &hjj);
            }
            if vi != usize::MAX && vj != usize::MAX {
                if vi > vj {
                    add_block(vi, vj, &hij);
                } else {
                    add_block(vj, vi, &hij.transpose());
                }
            }
            for r in 0..6 {
                if vi != usize::MAX {
                    g[6 * vi + r] += gi[r];
                }
                if vj != usize::MAX {
                    g[6 * vj + r] += gj[r];
                }
            }
        }
        for d in 0..dim {
            *h.at(d, d) += 1e-9;
        }
        let chol = h.factor().ok_or_else(|| Error::Invalid("pose graph normal equations are singular".into()))?;
        let mut delta: Vec<f64> = g.iter().map(|v| -v).collect();
        chol.solve(&mut delta);
        let mut max_step: f64 = 0.0;
        for v in 0..n {
            if var[v] == usize::MAX {
                continue;
            }
            let d = &delta[6 * var[v]..6 * var[v] + 6];
            let omega = Vector3::new(d[0], d[1], d[2]);
            let t = Vector3::new(d[3], d[4], d[5]);
            max_step = max_step.max(omega.norm() + t.norm());
            poses[v] = RigidPose::from_scaled_axis(omega, t).compose(&poses[v]).renormalized();
        }
        if max_step < cfg.tol {
            break;
        }
    }
    let objective_final = graph_objective(nodes, &edges, &poses);
    Ok(PoseGraphSolution {
        poses,
        edges,
        iterations,
        objective_initial,
        objective_final,
    })
}

/// Builds the sparse graph and optimizes it with `base` fixed.
pub fn optimize_pose_graph(
    nodes: &[ShapeNode],
    base: usize,
    cfg: &PoseGraphConfig,
    icp: &IcpConfig,
) -> Result<PoseGraphSolution> {
    if nodes.len() < 2 {
        return Err(Error::InsufficientShapes(nodes.len()));
    }
    let edges = build_edges(nodes, cfg.k, icp)?;
    optimize_edges(nodes, edges, base, cfg)
}
