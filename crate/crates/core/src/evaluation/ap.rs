//! Average precision with greedy score-ordered matching.

use serde::{Deserialize, Serialize};

use super::{frame_index_of, EvalBox, IouKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Exact area under the precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.01, …, 1.
    Point101,
}

/// Result of matching predictions to GTs in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyMatch {
    /// Prediction indices in processing order.
    pub order: Vec<usize>,
    /// Per prediction (input order): matched GT index and IoU.
    pub matched: Vec<Option<(usize, f64)>>,
}

/// Each prediction, highest score first (ties by input order), takes the
/// unmatched same-frame same-class GT with the highest IoU, if that IoU
/// reaches `threshold`.
pub fn greedy_match(preds: &[EvalBox], gts: &[EvalBox], iou: IouKind, threshold: f64) -> GreedyMatch {
    let index = frame_index_of(gts);
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut matched = vec![None; preds.len()];
    for &p in &order {
        let pb = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for &g in index.get(&(pb.seq, pb.frame)).map_or(&[][..], |v| v.as_slice()) {
            if used[g] || gts[g].class != pb.class {
                continue;
            }
            let v = iou.eval(&pb.bbox, &gts[g].bbox);
            if best.is_none_or(|b| v > b.1) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best.filter(|b| b.1 >= threshold) {
            used[g] = true;
            matched[p] = Some((g, v));
        }
    }
    GreedyMatch { order, matched }
}

/// `(recall, precision)` after each prediction in score order.
pub fn pr_curve(m: &GreedyMatch, num_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    m.order
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            tp += m.matched[p].is_some() as usize;
            (tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Area under a PR curve given in processing order.
pub fn ap_from_curve(curve: &[(f64, f64)], interp: Interpolation) -> f64 {
    let mut env: Vec<f64> = curve.iter().map(|c| c.1).collect();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    match interp {
        Interpolation::AllPoint => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (k, &(r, _)) in curve.iter().enumerate() {
                area += (r - prev) * env[k];
                prev = r;
            }
            area
        }
        Interpolation::Point101 => {
            (0..=100)
                .map(|t| {
                    let r = t as f64 / 100.0;
                    curve.iter().position(|c| c.0 >= r - 1e-12).map_or(0.0, |k| env[k])
                })
                .sum::<f64>()
                / 101.0
        }
    }
}

pub fn average_precision(
    preds: &[EvalBox],
    gts: &[EvalBox],
    iou: IouKind,
    threshold: f64,
    interp: Interpolation,
) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let m = greedy_match(preds, gts, iou, threshold);
    Ok(ap_from_curve(&pr_curve(&m, gts.len()), interp).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box7, ObjectClass};
    use proptest::prelude::*;

    fn b(frame: u32, x: f64, score: f64) -> EvalBox {
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
    fn perfect_and_disjoint() {
        let gts: Vec<_> = (0..4).map(|f| b(f, 0.0, 1.0)).collect();
        assert_eq!(average_precision(&gts, &gts, IouKind::Iou3d, 0.7, Interpolation::AllPoint).unwrap(), 1.0);
        let far: Vec<_> = (0..4).map(|f| b(f, 100.0, 0.9)).collect();
        assert_eq!(average_precision(&far, &gts, IouKind::Iou3d, 0.7, Interpolation::AllPoint).unwrap(), 0.0);
        assert!(matches!(
            average_precision(&far, &[], IouKind::Iou3d, 0.7, Interpolation::AllPoint),
            Err(Error::NoGroundTruth)
        ));
    }

    /// Five predictions, four GTs; in score order TP FP TP FP TP.
    /// Recall steps 1/4, 2/4, 3/4 at precisions 1, 2/3, 3/5.
    #[test]
    fn five_box_case_matches_hand_enumeration() {
        let gts: Vec<_> = (0..4).map(|f| b(f, 0.0, 1.0)).collect();
        let preds = vec![
            b(0, 0.0, 0.9),
            b(1, 50.0, 0.8),
            b(1, 0.1, 0.7),
            b(2, 50.0, 0.6),
            b(2, 0.0, 0.5),
        ];
        let ap = average_precision(&preds, &gts, IouKind::Iou3d, 0.7, Interpolation::AllPoint).unwrap();
        let want = 0.25 * 1.0 + 0.25 * (2.0 / 3.0) + 0.25 * 0.6;
        assert!((ap - want).abs() < 1e-15);
        let ap101 = average_precision(&preds, &gts, IouKind::Iou3d, 0.7, Interpolation::Point101).unwrap();
        let want101 = (26.0 * 1.0 + 25.0 * (2.0 / 3.0) + 25.0 * 0.6) / 101.0;
        assert!((ap101 - want101).abs() < 1e-12);
    }

    #[test]
    fn each_gt_matches_once() {
        let gts = vec![b(0, 0.0, 1.0)];
        let preds = vec![b(0, 0.0, 0.9), b(0, 0.0, 0.8)];
        let m = greedy_match(&preds, &gts, IouKind::Iou3d, 0.5);
        assert_eq!(m.matched.iter().filter(|x| x.is_some()).count(), 1);
        assert!(m.matched[0].is_some());
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_rescale(
            xs in proptest::collection::vec((0u32..4, -3.0..3.0f64, 0.01..1.0f64), 1..12)
        ) {
            let gts: Vec<_> = (0..4).map(|f| b(f, 0.0, 1.0)).collect();
            let preds: Vec<_> = xs.iter().map(|&(f, x, s)| b(f, x, s)).collect();
            let warped: Vec<_> = preds.iter().map(|p| EvalBox { score: p.score.powi(3) * 7.0 - 2.0, ..*p }).collect();
            let a = average_precision(&preds, &gts, IouKind::Iou3d, 0.5, Interpolation::AllPoint).unwrap();
            let c = average_precision(&warped, &gts, IouKind::Iou3d, 0.5, Interpolation::AllPoint).unwrap();
            prop_assert_eq!(a, c);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
