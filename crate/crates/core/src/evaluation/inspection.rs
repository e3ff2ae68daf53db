//! Failure-profile metrics: totally missed GTs, high-confidence false
//! positives, high-precision true positives, track life cycles and motion
//! state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ap::greedy_match;
use super::{frame_index_of, ClassThresholds, EvalBox, IouKind};
use crate::assignment::FrameBoxes;
use crate::geometry::{bev_iou, iou3d, ObjectClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectionConfig {
    /// Predictions kept per frame, highest score first.
    pub cap_per_frame: usize,
    /// 3D IoU for a true positive.
    pub normal: ClassThresholds,
    /// BEV IoU for a high-precision true positive.
    pub high_precision_bev: ClassThresholds,
}

impl Default for InspectionConfig {
    fn default() -> Self {
        Self {
            cap_per_frame: 200,
            normal: ClassThresholds::default(),
            high_precision_bev: ClassThresholds {
                vehicle: 0.9,
                pedestrian: 0.7,
                cyclist: 0.7,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InspectionReport {
    pub num_gt: usize,
    pub num_pred: usize,
    pub true_positives: usize,
    pub t_fn: usize,
    /// Over GT count.
    pub t_fn_ratio: f64,
    pub h_fp: usize,
    /// Over kept predictions.
    pub h_fp_ratio: f64,
    pub h_tp: usize,
    /// Over GT count.
    pub h_tp_ratio: f64,
    /// Score at which recall first reaches one half.
    pub s_t: f64,
    /// Recall never reached one half; `s_t` is the lowest score.
    pub s_t_fallback: bool,
}

/// Keeps the `cap` highest-scoring predictions of each frame (ties by
/// input order).
pub fn cap_per_frame(preds: &[EvalBox], cap: usize) -> Vec<EvalBox> {
    let mut by_frame: HashMap<(usize, u32), Vec<usize>> = HashMap::new();
    for (i, p) in preds.iter().enumerate() {
        by_frame.entry((p.seq, p.frame)).or_default().push(i);
    }
    let mut keep = vec![false; preds.len()];
    for idx in by_frame.values_mut() {
        idx.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
        for &i in idx.iter().take(cap) {
            keep[i] = true;
        }
    }
    preds.iter().zip(keep).filter_map(|(p, k)| k.then_some(*p)).collect()
}

/// Per-GT flag: no overlap with any kept same-class prediction in its frame.
pub fn totally_missed(kept: &[EvalBox], gts: &[EvalBox]) -> Vec<bool> {
    let index = frame_index_of(kept);
    gts.iter()
        .map(|g| {
            index
                .get(&(g.seq, g.frame))
                .is_none_or(|v| v.iter().all(|&p| kept[p].class != g.class || iou3d(&kept[p].bbox, &g.bbox) == 0.0))
        })
        .collect()
}

/// Inspection metrics for one class; inputs may hold other classes.
pub fn inspection(preds: &[EvalBox], gts: &[EvalBox], class: ObjectClass, cfg: &InspectionConfig) -> InspectionReport {
    let kept: Vec<EvalBox> = cap_per_frame(preds, cfg.cap_per_frame)
        .into_iter()
        .filter(|p| p.class == class)
        .collect();
    let gts: Vec<EvalBox> = gts.iter().filter(|g| g.class == class).copied().collect();
    let num_gt = gts.len();
    let t_fn = totally_missed(&kept, &gts).iter().filter(|m| **m).count();

    let m = greedy_match(&kept, &gts, IouKind::Iou3d, cfg.normal.for_class(class));
    let mut tp = 0;
    let mut s_t = None;
    for &p in &m.order {
        if m.matched[p].is_some() {
            tp += 1;
            if s_t.is_none() && 2 * tp >= num_gt {
                s_t = Some(kept[p].score);
            }
        }
    }
    let (s_t, s_t_fallback) = match s_t {
        Some(s) => (s, false),
        None => (kept.iter().map(|p| p.score).reduce(f64::min).unwrap_or(0.0), true),
    };
    let h_fp = m
        .order
        .iter()
        .filter(|&&p| m.matched[p].is_none() && kept[p].score >= s_t)
        .count();
    let hp = cfg.high_precision_bev.for_class(class);
    let h_tp = m
        .matched
        .iter()
        .enumerate()
        .filter(|(p, x)| x.is_some_and(|(g, _)| bev_iou(&kept[*p].bbox, &gts[g].bbox) >= hp))
        .count();
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    InspectionReport {
        num_gt,
        num_pred: kept.len(),
        true_positives: tp,
        t_fn,
        t_fn_ratio: ratio(t_fn, num_gt),
        h_fp,
        h_fp_ratio: ratio(h_fp, kept.len()),
        h_tp,
        h_tp_ratio: ratio(h_tp, num_gt),
        s_t,
        s_t_fallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LifeCycleBin {
    pub lo_s: f64,
    /// Upper edge; `None` for the overflow bin.
    pub hi_s: Option<f64>,
    pub tracks: usize,
    pub inferior: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LifeCycleReport {
    pub bins: Vec<LifeCycleBin>,
    /// `(sequence index, gt track id)` of tracks with more than 10 % of
    /// boxes totally missed.
    pub inferior: Vec<(usize, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifeCycleConfig {
    pub hz: f64,
    pub bin_s: f64,
    pub num_bins: usize,
    /// A track is inferior when its missed fraction exceeds this.
    pub inferior_fraction: f64,
}

impl Default for LifeCycleConfig {
    fn default() -> Self {
        Self {
            hz: 10.0,
            bin_s: 2.0,
            num_bins: 10,
            inferior_fraction: 0.1,
        }
    }
}

/// Histogram of GT track lengths (seconds) and the inferior-track list.
/// `gt_boxes` are the GT tracks' boxes flattened, with `id` = GT track id.
pub fn life_cycle_analysis(kept_preds: &[EvalBox], gt_boxes: &[EvalBox], cfg: &LifeCycleConfig) -> LifeCycleReport {
    let missed = totally_missed(kept_preds, gt_boxes);
    let mut per_track: std::collections::BTreeMap<(usize, u64), (u32, u32, usize, usize)> = Default::default();
    for (g, m) in gt_boxes.iter().zip(&missed) {
        let slot = per_track.entry((g.seq, g.id)).or_insert((g.frame, g.frame, 0, 0));
        slot.0 = slot.0.min(g.frame);
        slot.1 = slot.1.max(g.frame);
        slot.2 += 1;
        slot.3 += *m as usize;
    }
    let n = cfg.num_bins.max(1);
    let mut bins: Vec<LifeCycleBin> = (0..n)
        .map(|k| LifeCycleBin {
            lo_s: k as f64 * cfg.bin_s,
            hi_s: (k + 1 < n).then(|| (k + 1) as f64 * cfg.bin_s),
            tracks: 0,
            inferior: 0,
        })
        .collect();
    let mut inferior = Vec::new();
    for (key, (first, last, count, misses)) in per_track {
        let secs = (last - first + 1) as f64 / cfg.hz;
        let k = ((secs / cfg.bin_s).floor() as usize).min(n - 1);
        bins[k].tracks += 1;
        if misses as f64 > cfg.inferior_fraction * count as f64 {
            bins[k].inferior += 1;
            inferior.push(key);
        }
    }
    LifeCycleReport { bins, inferior }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionState {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub hz: f64,
    /// Speed above which an object counts as moving (m/s).
    pub speed: ClassThresholds,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            hz: 10.0,
            speed: ClassThresholds {
                vehicle: 1.0,
                pedestrian: 0.2,
                cyclist: 1.0,
            },
        }
    }
}

/// Endpoint displacement over elapsed time against the class threshold.
pub fn motion_state<T: FrameBoxes + ?Sized>(track: &T, class: ObjectClass, cfg: &MotionConfig) -> MotionState {
    let boxes = track.frame_boxes();
    let (Some(first), Some(last)) = (boxes.first(), boxes.last()) else {
        return MotionState::Static;
    };
    if last.0 == first.0 {
        return MotionState::Static;
    }
    let secs = (last.0 - first.0) as f64 / cfg.hz;
    let speed = (last.1.center() - first.1.center()).norm() / secs;
    if speed > cfg.speed.for_class(class) {
        MotionState::Dynamic
    } else {
        MotionState::Static
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box7;

    fn vb(frame: u32, x: f64, score: f64) -> EvalBox {
        EvalBox {
            seq: 0,
            frame,
            id: 0,
            class: ObjectClass::Vehicle,
            bbox: Box7::new(x, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0),
            score,
        }
    }

    #[test]
    fn perfect_predictions() {
        let gts: Vec<_> = (0..10).map(|f| vb(f, 0.0, 1.0)).collect();
        let r = inspection(&gts, &gts, ObjectClass::Vehicle, &InspectionConfig::default());
        assert_eq!((r.t_fn, r.h_fp, r.h_tp), (0, 0, 10));
        assert_eq!(r.h_tp_ratio, 1.0);
        assert!(!r.s_t_fallback);
    }

    #[test]
    fn mixed_case_matches_per_gt_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let gts: Vec<_> = (0..40).map(|i| vb(i % 8, rng.random_range(-20.0..20.0), 1.0)).collect();
        let preds: Vec<_> = (0..60).map(|i| vb(i % 8, rng.random_range(-20.0..20.0), rng.random())).collect();
        let r = inspection(&preds, &gts, ObjectClass::Vehicle, &InspectionConfig::default());
        let oracle = gts
            .iter()
            .filter(|g| {
                preds
                    .iter()
                    .filter(|p| p.frame == g.frame)
                    .map(|p| iou3d(&p.bbox, &g.bbox))
                    .fold(0.0, f64::max)
                    == 0.0
            })
            .count();
        assert_eq!(r.t_fn, oracle);
        assert!(r.t_fn > 0 && r.t_fn < 40);
    }

    #[test]
    fn s_t_sits_at_half_recall() {
        // four GTs; score order TP FP TP TP: recall reaches 2/4 at the third
        let gts: Vec<_> = (0..4).map(|f| vb(f, 0.0, 1.0)).collect();
        let preds = vec![vb(0, 0.0, 0.9), vb(1, 50.0, 0.8), vb(1, 0.0, 0.7), vb(2, 0.0, 0.6)];
        let r = inspection(&preds, &gts, ObjectClass::Vehicle, &InspectionConfig::default());
        assert_eq!(r.s_t, 0.7);
        assert_eq!(r.h_fp, 1);
        assert_eq!(r.t_fn, 1);
        let few = inspection(&preds[..2], &gts, ObjectClass::Vehicle, &InspectionConfig::default());
        assert!(few.s_t_fallback);
        assert_eq!(few.s_t, 0.8);
    }

    #[test]
    fn raising_high_precision_bar_never_adds() {
        let gts: Vec<_> = (0..6).map(|f| vb(f, 0.0, 1.0)).collect();
        let preds: Vec<_> = (0..6).map(|f| vb(f, 0.05 * f as f64, 0.9)).collect();
        let mut last = usize::MAX;
        for bar in [0.5, 0.8, 0.9, 0.95, 0.99, 1.0] {
            let cfg = InspectionConfig {
                high_precision_bev: ClassThresholds { vehicle: bar, ..Default::default() },
                ..Default::default()
            };
            let n = inspection(&preds, &gts, ObjectClass::Vehicle, &cfg).h_tp;
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn cap_keeps_top_scores() {
        let preds: Vec<_> = (0..5).map(|i| vb(0, i as f64 * 10.0, i as f64 / 10.0)).collect();
        let kept = cap_per_frame(&preds, 2);
        assert_eq!(kept.iter().map(|p| p.score).collect::<Vec<_>>(), vec![0.3, 0.4]);
    }

    #[test]
    fn adding_predictions_never_raises_t_fn() {
        let gts: Vec<_> = (0..6).map(|f| vb(f, 0.0, 1.0)).collect();
        let mut preds = Vec::new();
        let mut last = usize::MAX;
        for f in 0..6 {
            let n = totally_missed(&preds, &gts).iter().filter(|m| **m).count();
            assert!(n <= last);
            last = n;
            preds.push(vb(f, 1.0, 0.5));
        }
    }

    #[test]
    fn life_cycle_inferior_rule() {
        let mut gts: Vec<EvalBox> = (0..10).map(|f| EvalBox { id: 1, ..vb(f, 0.0, 1.0) }).collect();
        gts.extend((0..25).map(|f| EvalBox { id: 2, ..vb(f, 30.0, 1.0) }));
        // track 1 misses 2 of 10 boxes, track 2 none
        let preds: Vec<_> = (2..10).map(|f| vb(f, 0.0, 0.9)).chain((0..25).map(|f| vb(f, 30.0, 0.9))).collect();
        let r = life_cycle_analysis(&preds, &gts, &LifeCycleConfig::default());
        assert_eq!(r.inferior, vec![(0, 1)]);
        assert_eq!(r.bins.iter().map(|b| b.tracks).sum::<usize>(), 2);
        assert_eq!(r.bins[0].tracks, 1);
        assert_eq!(r.bins[1].tracks, 1);
        assert_eq!(r.bins[0].inferior, 1);
    }

    #[test]
    fn motion_examples() {
        let cfg = MotionConfig::default();
        let still: Vec<(u32, Box7)> = (0..10).map(|f| (f, Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0))).collect();
        assert_eq!(motion_state(still.as_slice(), ObjectClass::Vehicle, &cfg), MotionState::Static);
        let car: Vec<(u32, Box7)> = (0..11).map(|f| (f, Box7::new(0.2 * f as f64, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0))).collect();
        assert_eq!(motion_state(car.as_slice(), ObjectClass::Vehicle, &cfg), MotionState::Dynamic);
        let ped: Vec<(u32, Box7)> = (0..11).map(|f| (f, Box7::new(0.05 * f as f64, 0.0, 0.0, 0.8, 0.8, 1.8, 0.0))).collect();
        assert_eq!(motion_state(ped.as_slice(), ObjectClass::Pedestrian, &cfg), MotionState::Dynamic);
        assert_eq!(motion_state(&still[..1], ObjectClass::Vehicle, &cfg), MotionState::Static);
    }
}
