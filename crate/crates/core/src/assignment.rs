//! Track-centric label assignment.
//!
//! Predicted tracks are matched to ground-truth tracks by Track IoU (the sum
//! of per-frame 3D IoU over shared frames, divided by the number of frames in
//! either track). GT tracks above a threshold become candidates, and each
//! proposal then takes its box from the best candidate present at its frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou3d, normalize_yaw, Box7, LabeledBox, ObjectClass};
use crate::tracking::Tracklet;

/// One annotated frame of a ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtEntry {
    pub frame_index: u32,
    pub bbox: Box7,
    pub num_points: u32,
}

/// Ground-truth track. Frames may have gaps (unobserved frames are not
/// annotated).
#[derive(Debug, Clone, PartialEq)]
pub struct GtTrack {
    pub gt_track_id: u64,
    pub class: ObjectClass,
    pub entries: Vec<GtEntry>,
}

impl GtTrack {
    pub fn entry_at(&self, frame: u32) -> Option<&GtEntry> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame_index)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn as_labeled_boxes(&self) -> impl Iterator<Item = LabeledBox> + '_ {
        self.entries.iter().map(move |e| LabeledBox {
            bbox: e.bbox,
            class: self.class,
            score: 1.0,
            frame_index: e.frame_index,
        })
    }
}

/// Anything with frame-sorted boxes.
pub trait FrameBoxes {
    fn frame_boxes(&self) -> Vec<(u32, Box7)>;
}

impl FrameBoxes for Tracklet {
    fn frame_boxes(&self) -> Vec<(u32, Box7)> {
        self.entries.iter().map(|e| (e.frame_index, e.bbox)).collect()
    }
}

impl FrameBoxes for GtTrack {
    fn frame_boxes(&self) -> Vec<(u32, Box7)> {
        self.entries.iter().map(|e| (e.frame_index, e.bbox)).collect()
    }
}

impl FrameBoxes for [(u32, Box7)] {
    fn frame_boxes(&self) -> Vec<(u32, Box7)> {
        self.to_vec()
    }
}

/// Track IoU over frame-sorted box lists.
pub fn tiou<A: FrameBoxes + ?Sized, B: FrameBoxes + ?Sized>(a: &A, b: &B) -> Result<f64> {
    let (a, b) = (a.frame_boxes(), b.frame_boxes());
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptyTracks);
    }
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    let mut union = 0usize;
    while i < a.len() || j < b.len() {
        union += 1;
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                sum += iou3d(&x.1, &y.1);
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.0 < y.0 => i += 1,
            (Some(_), None) => i += 1,
            _ => j += 1,
        }
    }
    Ok(sum / union as f64)
}

/// Soft classification target `min(1, max(0, 2·iou − 0.5))`.
pub fn soft_target(iou: f64) -> f64 {
    (2.0 * iou - 0.5).clamp(0.0, 1.0)
}

/// Box residual from `proposal` to `gt`: center offset in the proposal frame
/// scaled by its BEV diagonal (z by height), log size ratios, yaw difference.
pub fn residual_target(proposal: &Box7, gt: &Box7) -> [f64; 7] {
    let d = proposal.bev_diagonal();
    let (s, c) = proposal.yaw.sin_cos();
    let (dx, dy) = (gt.cx - proposal.cx, gt.cy - proposal.cy);
    [
        (c * dx + s * dy) / d,
        (-s * dx + c * dy) / d,
        (gt.cz - proposal.cz) / proposal.h,
        (gt.l / proposal.l).ln(),
        (gt.w / proposal.w).ln(),
        (gt.h / proposal.h).ln(),
        normalize_yaw(gt.yaw - proposal.yaw),
    ]
}

/// Inverse of [`residual_target`].
pub fn decode_residual(proposal: &Box7, r: &[f64; 7]) -> Box7 {
    let d = proposal.bev_diagonal();
    let (s, c) = proposal.yaw.sin_cos();
    let (lx, ly) = (r[0] * d, r[1] * d);
    Box7::new(
        proposal.cx + c * lx - s * ly,
        proposal.cy + s * lx + c * ly,
        proposal.cz + r[2] * proposal.h,
        proposal.l * r[3].exp(),
        proposal.w * r[4].exp(),
        proposal.h * r[5].exp(),
        proposal.yaw + r[6],
    )
}

/// Training target for one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalTarget {
    pub frame_index: u32,
    /// `(gt id, gt box)`; `None` marks a negative.
    #[serde(skip)]
    pub gt: Option<(u64, Box7)>,
    pub iou: f64,
    pub q: f64,
    pub residual: Option<[f64; 7]>,
}

impl ProposalTarget {
    pub fn negative(frame_index: u32) -> Self {
        Self {
            frame_index,
            gt: None,
            iou: 0.0,
            q: 0.0,
            residual: None,
        }
    }

    pub fn positive(frame_index: u32, proposal: &Box7, gt_id: u64, gt: &Box7) -> Self {
        let iou = iou3d(proposal, gt);
        Self {
            frame_index,
            gt: Some((gt_id, *gt)),
            iou,
            q: soft_target(iou),
            residual: Some(residual_target(proposal, gt)),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.gt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackAssignment {
    pub track_id: u64,
    pub matched: bool,
    /// Round-1 candidates `(gt id, TIoU)`, best first.
    pub candidates: Vec<(u64, f64)>,
    pub proposals: Vec<ProposalTarget>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    pub tracks: Vec<TrackAssignment>,
}

/// Two-round track-centric assignment.
///
/// Round 1 keeps every same-class GT track with TIoU above `tiou_threshold`
/// as a candidate. Round 2 labels each proposal with the box of the highest
/// TIoU candidate that has a box at that frame (ties to the lower GT id).
pub fn two_round_assign(pred: &[Tracklet], gts: &[GtTrack], tiou_threshold: f64) -> Result<AssignmentResult> {
    let mut tracks = Vec::with_capacity(pred.len());
    for p in pred {
        let mut candidates = Vec::new();
        for g in gts.iter().filter(|g| g.class == p.class) {
            if p.entries.is_empty() && g.entries.is_empty() {
                continue;
            }
            let t = tiou(p, g)?;
            if t > tiou_threshold {
                candidates.push((g.gt_track_id, t, g));
            }
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let proposals = p
            .entries
            .iter()
            .map(|e| {
                candidates
                    .iter()
                    .find_map(|(id, _, g)| g.entry_at(e.frame_index).map(|ge| (*id, ge.bbox)))
                    .map_or_else(
                        || ProposalTarget::negative(e.frame_index),
                        |(id, gb)| ProposalTarget::positive(e.frame_index, &e.bbox, id, &gb),
                    )
            })
            .collect();
        tracks.push(TrackAssignment {
            track_id: p.track_id,
            matched: !candidates.is_empty(),
            candidates: candidates.iter().map(|(id, t, _)| (*id, *t)).collect(),
            proposals,
        });
    }
    Ok(AssignmentResult { tracks })
}

/// Positive IoU thresholds for per-frame assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectCentricThresholds {
    pub vehicle: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for ObjectCentricThresholds {
    fn default() -> Self {
        Self {
            vehicle: 0.45,
            pedestrian: 0.35,
            cyclist: 0.35,
        }
    }
}

impl ObjectCentricThresholds {
    pub fn for_class(&self, c: ObjectClass) -> f64 {
        match c {
            ObjectClass::Vehicle => self.vehicle,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }
}

/// Per-frame max-IoU assignment. GT ids are indices into `gts`.
pub fn object_centric_assign(
    proposals: &[LabeledBox],
    gts: &[LabeledBox],
    thresholds: &ObjectCentricThresholds,
) -> Vec<ProposalTarget> {
    proposals
        .iter()
        .map(|p| {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.frame_index == p.frame_index && g.class == p.class)
                .map(|(i, g)| (i, iou3d(&p.bbox, &g.bbox)))
                .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                    Some(a) if a.1 >= c.1 => Some(a),
                    _ => Some(c),
                });
            match best {
                Some((i, iou)) if iou >= thresholds.for_class(p.class) => {
                    ProposalTarget::positive(p.frame_index, &p.bbox, i as u64, &gts[i].bbox)
                }
                _ => ProposalTarget::negative(p.frame_index),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{Origin, TrackEntry};
    use proptest::prelude::*;

    fn car(x: f64) -> Box7 {
        Box7::new(x, 0.0, 0.8, 4.0, 2.0, 1.5, 0.0)
    }

    fn pred(id: u64, frames: impl IntoIterator<Item = (u32, Box7)>) -> Tracklet {
        Tracklet {
            track_id: id,
            class: ObjectClass::Vehicle,
            entries: frames
                .into_iter()
                .map(|(f, b)| TrackEntry {
                    frame_index: f,
                    bbox: b,
                    score: 0.9,
                    origin: Origin::Detected,
                })
                .collect(),
        }
    }

    fn gt(id: u64, frames: impl IntoIterator<Item = (u32, Box7)>) -> GtTrack {
        GtTrack {
            gt_track_id: id,
            class: ObjectClass::Vehicle,
            entries: frames
                .into_iter()
                .map(|(f, b)| GtEntry {
                    frame_index: f,
                    bbox: b,
                    num_points: 100,
                })
                .collect(),
        }
    }

    #[test]
    fn tiou_basic_cases() {
        let a = pred(0, (0..10).map(|f| (f, car(0.0))));
        assert_eq!(tiou(&a, &a).unwrap(), 1.0);
        let far = pred(1, (20..30).map(|f| (f, car(0.0))));
        assert_eq!(tiou(&a, &far).unwrap(), 0.0);
        let b = pred(2, (5..15).map(|f| (f, car(0.0))));
        // 5 shared frames of IoU 1 over 15 frames in the union
        assert!((tiou(&a, &b).unwrap() - 5.0 / 15.0).abs() < 1e-15);
        let e: &[(u32, Box7)] = &[];
        assert!(matches!(tiou(e, e), Err(Error::EmptyTracks)));
    }

    #[test]
    fn soft_target_breakpoints() {
        assert_eq!(soft_target(0.25), 0.0);
        assert_eq!(soft_target(0.5), 0.5);
        assert_eq!(soft_target(0.75), 1.0);
        assert_eq!(soft_target(0.0), 0.0);
        assert_eq!(soft_target(1.0), 1.0);
    }

    #[test]
    fn residual_examples() {
        let p = Box7::new(1.0, 2.0, 0.5, 4.0, 2.0, 1.5, 0.6);
        assert_eq!(residual_target(&p, &p), [0.0; 7]);
        let g = Box7 {
            cx: p.cx + p.yaw.cos(),
            cy: p.cy + p.yaw.sin(),
            ..p
        };
        let r = residual_target(&p, &g);
        assert!((r[0] - 1.0 / 20f64.sqrt()).abs() < 1e-12);
        assert!(r[1..].iter().all(|v| v.abs() < 1e-12));
        let back = decode_residual(&p, &r);
        assert!((back.cx - g.cx).abs() < 1e-12 && (back.cy - g.cy).abs() < 1e-12);
    }

    #[test]
    fn one_track_above_threshold_is_assigned() {
        let p = pred(0, (0..10).map(|f| (f, car(0.2))));
        let g = gt(7, (0..10).map(|f| (f, car(0.0))));
        let r = two_round_assign(&[p], &[g], 0.5).unwrap();
        let t = &r.tracks[0];
        assert!(t.matched);
        assert!(t.proposals.iter().all(|x| x.gt.map(|g| g.0) == Some(7)));
        assert!(t.proposals.iter().all(|x| (x.q - soft_target(x.iou)).abs() == 0.0));
    }

    #[test]
    fn no_candidate_means_all_negative() {
        let p = pred(0, (0..10).map(|f| (f, car(50.0))));
        let g = gt(7, (0..10).map(|f| (f, car(0.0))));
        let r = two_round_assign(&[p], &[g], 0.3).unwrap();
        assert!(!r.tracks[0].matched);
        assert!(r.tracks[0].proposals.iter().all(|x| !x.is_positive() && x.q == 0.0 && x.residual.is_none()));
    }

    #[test]
    fn higher_tiou_candidate_wins_frame_conflict() {
        // the prediction follows GT2 for most of its life; at frame 2 its
        // proposal overlaps GT1's box better, but GT2 still supplies the label
        let p = pred(0, (0..6).map(|f| (f, if f == 2 { car(1.0) } else { car(3.0) })));
        let g1 = gt(1, (0..6).map(|f| (f, car(0.6))));
        let g2 = gt(2, (0..6).map(|f| (f, car(3.0))));
        let prop = p.entries[2].bbox;
        assert!(iou3d(&prop, &g1.entries[2].bbox) > iou3d(&prop, &g2.entries[2].bbox));
        let t1 = tiou(&p, &g1).unwrap();
        let t2 = tiou(&p, &g2).unwrap();
        assert!(t2 > t1 && t1 > 0.3);
        let r = two_round_assign(&[p], &[g1, g2], 0.3).unwrap();
        assert_eq!(r.tracks[0].candidates.len(), 2);
        assert_eq!(r.tracks[0].proposals[2].gt.unwrap().0, 2);
    }

    #[test]
    fn object_centric_thresholds() {
        let g = LabeledBox {
            bbox: car(0.0),
            class: ObjectClass::Vehicle,
            score: 1.0,
            frame_index: 3,
        };
        let r = object_centric_assign(&[g], &[g], &ObjectCentricThresholds::default());
        assert!(r[0].is_positive());
        // shift until 3D IoU is 0.44: (4 − d)/(4 + d) = 0.44
        let d = 4.0 * (1.0 - 0.44) / 1.44;
        let p = LabeledBox { bbox: car(d), ..g };
        assert!((iou3d(&p.bbox, &g.bbox) - 0.44).abs() < 1e-12);
        let r = object_centric_assign(&[p], &[g], &ObjectCentricThresholds::default());
        assert!(!r[0].is_positive());
    }

    #[test]
    fn object_centric_matches_argmax_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, f: u32| LabeledBox {
            bbox: Box7::new(rng.random_range(0.0..6.0), rng.random_range(0.0..3.0), 0.8, 4.0, 2.0, 1.5, rng.random_range(-0.3..0.3)),
            class: ObjectClass::Vehicle,
            score: 1.0,
            frame_index: f,
        };
        let gts: Vec<_> = (0..12).map(|i| mk(&mut rng, i % 3)).collect();
        let props: Vec<_> = (0..30).map(|i| mk(&mut rng, i % 3)).collect();
        let got = object_centric_assign(&props, &gts, &ObjectCentricThresholds::default());
        for (p, r) in props.iter().zip(&got) {
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in gts.iter().enumerate() {
                if g.frame_index != p.frame_index {
                    continue;
                }
                let v = iou3d(&p.bbox, &g.bbox);
                if best.is_none_or(|b| v > b.1) {
                    best = Some((i, v));
                }
            }
            let expect = best.filter(|b| b.1 >= 0.45).map(|b| b.0 as u64);
            assert_eq!(r.gt.map(|g| g.0), expect);
        }
    }

    fn arb_track() -> impl Strategy<Value = Vec<(u32, Box7)>> {
        proptest::collection::btree_map(0u32..12, (-2.0..2.0f64, -0.5..0.5f64), 0..12).prop_map(|m| {
            m.into_iter()
                .map(|(f, (x, yaw))| (f, Box7::new(x, 0.0, 0.8, 4.0, 2.0, 1.5, yaw)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tiou_symmetric_bounded(a in arb_track(), b in arb_track()) {
            prop_assume!(!(a.is_empty() && b.is_empty()));
            let x = tiou(a.as_slice(), b.as_slice()).unwrap();
            prop_assert_eq!(x, tiou(b.as_slice(), a.as_slice()).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn appending_zero_iou_frame_lowers_tiou(a in arb_track(), b in arb_track()) {
            let before = match tiou(a.as_slice(), b.as_slice()) { Ok(v) => v, Err(_) => return Ok(()) };
            prop_assume!(before > 0.0);
            let mut a2 = a.clone();
            a2.push((100, Box7::new(500.0, 0.0, 0.8, 4.0, 2.0, 1.5, 0.0)));
            prop_assert!(tiou(a2.as_slice(), b.as_slice()).unwrap() < before);
        }

        #[test]
        fn soft_target_monotone_piecewise(x in 0.0..1.0f64, y in 0.0..1.0f64) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(soft_target(lo) <= soft_target(hi));
            if (0.25..=0.75).contains(&x) {
                prop_assert!((soft_target(x) - (2.0 * x - 0.5)).abs() < 1e-15);
            }
        }

        #[test]
        fn residual_round_trip(p in (-10.0..10.0f64, -10.0..10.0f64, 0.5..5.0f64, 0.5..3.0f64, -3.0..3.0f64),
                               g in (-10.0..10.0f64, -10.0..10.0f64, 0.5..5.0f64, 0.5..3.0f64, -3.0..3.0f64)) {
            let pb = Box7::new(p.0, p.1, 0.3, p.2, p.3, 1.5, p.4);
            let gb = Box7::new(g.0, g.1, 0.9, g.2, g.3, 1.7, g.4);
            let back = decode_residual(&pb, &residual_target(&pb, &gb));
            for (u, v) in back.to_array().iter().zip(gb.to_array().iter()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
