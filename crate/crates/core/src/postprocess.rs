//! Empty-box removal and merging of test-time-augmentation variants.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{count_inside, normalize_yaw, Box7, FrameSource, ObjectClass};
use crate::tracking::{TrackEntry, Tracklet};

/// Tracks from one augmented pass, already mapped back to the original frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaVariant {
    pub tag: String,
    pub tracks: Vec<Tracklet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RemovalStats {
    pub entries_removed: usize,
    pub tracks_removed: usize,
}

/// Drops entries whose box holds no points (missing frames count as empty),
/// then drops tracks left without entries.
pub fn remove_empty<F: FrameSource + ?Sized>(tracks: &[Tracklet], frames: &F) -> (Vec<Tracklet>, RemovalStats) {
    let mut stats = RemovalStats::default();
    let mut out = Vec::with_capacity(tracks.len());
    for t in tracks {
        let entries: Vec<TrackEntry> = t
            .entries
            .iter()
            .filter(|e| frames.frame_cloud(e.frame_index).is_some_and(|c| count_inside(&e.bbox, c) > 0))
            .copied()
            .collect();
        stats.entries_removed += t.entries.len() - entries.len();
        if entries.is_empty() {
            stats.tracks_removed += 1;
        } else {
            out.push(Tracklet {
                track_id: t.track_id,
                class: t.class,
                entries,
            });
        }
    }
    (out, stats)
}

fn canonical_order(a: &TrackEntry, b: &TrackEntry) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            a.bbox
                .to_array()
                .iter()
                .zip(b.bbox.to_array().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then(a.origin.cmp(&b.origin))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median heading after folding every heading into the hemisphere of the
/// highest-score one. The result is then turned to whichever hemisphere
/// most inputs (then most score mass) point to, so a lone flipped variant
/// cannot drag the answer around even when it scores highest.
///
/// `items` must be in canonical order (highest score first).
pub fn merge_headings(items: &[(f64, f64)]) -> f64 {
    let reference = items[0].0;
    let mut folded = Vec::with_capacity(items.len());
    let (mut same, mut flipped) = ((0usize, 0.0), (0usize, 0.0));
    for &(yaw, score) in items {
        let d = normalize_yaw(yaw - reference);
        if d.abs() > FRAC_PI_2 {
            folded.push(reference + normalize_yaw(d + PI));
            flipped.0 += 1;
            flipped.1 += score;
        } else {
            folded.push(reference + d);
            same.0 += 1;
            same.1 += score;
        }
    }
    let m = median(&mut folded);
    let turn = flipped.0 > same.0 || (flipped.0 == same.0 && flipped.1 > same.1);
    normalize_yaw(if turn { m + PI } else { m })
}

/// Merges one frame's contributions.
fn merge_entries(mut items: Vec<TrackEntry>) -> TrackEntry {
    items.sort_by(canonical_order);
    let total: f64 = items.iter().map(|e| e.score.max(0.0)).sum();
    let weight = |e: &TrackEntry| {
        if total > 0.0 {
            e.score.max(0.0) / total
        } else {
            1.0 / items.len() as f64
        }
    };
    let mut acc = [0.0; 6];
    for e in &items {
        let w = weight(e);
        let a = e.bbox.to_array();
        for k in 0..6 {
            acc[k] += w * a[k];
        }
    }
    let yaw = merge_headings(&items.iter().map(|e| (e.bbox.yaw, e.score)).collect::<Vec<_>>());
    let score = items.iter().map(|e| e.score).sum::<f64>() / items.len() as f64;
    TrackEntry {
        frame_index: items[0].frame_index,
        bbox: Box7::new(acc[0], acc[1], acc[2], acc[3], acc[4], acc[5], yaw),
        score,
        origin: items[0].origin,
    }
}

/// Per `(track, frame)`: score-weighted center and size, hemisphere-folded
/// median heading, mean score. Frames present in only some variants merge
/// whatever is there.
pub fn tta_merge(variants: &[TtaVariant]) -> Result<Vec<Tracklet>> {
    if variants.is_empty() {
        return Err(Error::Invalid("tta_merge needs at least one variant".into()));
    }
    let mut grouped: BTreeMap<u64, (ObjectClass, BTreeMap<u32, Vec<TrackEntry>>)> = BTreeMap::new();
    for v in variants {
        for t in &v.tracks {
            let slot = grouped.entry(t.track_id).or_insert_with(|| (t.class, BTreeMap::new()));
            if slot.0 != t.class {
                return Err(Error::Invalid(format!(
                    "track {} has class {} in variant {:?} but {} elsewhere",
                    t.track_id, t.class, v.tag, slot.0
                )));
            }
            for e in &t.entries {
                slot.1.entry(e.frame_index).or_default().push(*e);
            }
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(track_id, (class, frames))| Tracklet {
            track_id,
            class,
            entries: frames.into_values().map(merge_entries).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_to_world, PointCloud};
    use crate::tracking::Origin;
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn e(f: u32, b: Box7, score: f64) -> TrackEntry {
        TrackEntry {
            frame_index: f,
            bbox: b,
            score,
            origin: Origin::Detected,
        }
    }

    fn track(id: u64, entries: Vec<TrackEntry>) -> Tracklet {
        Tracklet {
            track_id: id,
            class: ObjectClass::Vehicle,
            entries,
        }
    }

    fn variant(tracks: Vec<Tracklet>) -> TtaVariant {
        TtaVariant {
            tag: "v".into(),
            tracks,
        }
    }

    #[test]
    fn remove_empty_keeps_populated_boxes() {
        let full = Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0);
        let empty = Box7::new(50.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0);
        let frames = vec![PointCloud::from_points(vec![Point3::origin()]); 2];
        let tracks = vec![
            track(1, vec![e(0, full, 0.9), e(1, empty, 0.5)]),
            track(2, vec![e(0, empty, 0.9)]),
        ];
        let (out, stats) = remove_empty(&tracks, &frames);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].entries.len(), 1);
        assert_eq!(stats, RemovalStats { entries_removed: 2, tracks_removed: 1 });
        let (again, s2) = remove_empty(&out, &frames);
        assert_eq!(again, out);
        assert_eq!(s2, RemovalStats::default());
    }

    #[test]
    fn remove_empty_matches_crop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cloud = PointCloud::from_points(
            (0..300)
                .map(|_| Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-1.0..1.0)))
                .collect(),
        );
        let entries: Vec<TrackEntry> = (0..200)
            .map(|_| {
                let b = Box7::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0, 1.5, 1.0, 1.0, rng.random_range(-3.0..3.0));
                e(0, b, 0.5)
            })
            .collect();
        let oracle = entries
            .iter()
            .filter(|x| {
                let to_box = box_to_world(&x.bbox).inverse();
                !cloud.points.iter().any(|p| {
                    let q = to_box.transform_point(p);
                    q.x.abs() < 0.75 && q.y.abs() < 0.5 && q.z.abs() < 0.5
                })
            })
            .count();
        let tracks: Vec<Tracklet> = entries.iter().enumerate().map(|(i, x)| track(i as u64, vec![*x])).collect();
        let (_, stats) = remove_empty(&tracks, &vec![cloud]);
        assert_eq!(stats.entries_removed, oracle);
        assert!(oracle > 0 && oracle < 200);
    }

    #[test]
    fn identical_variants_merge_to_input() {
        let t = track(3, vec![e(0, Box7::new(1.0, 2.0, 0.5, 4.0, 2.0, 1.5, 0.7), 0.8)]);
        let out = tta_merge(&[variant(vec![t.clone()]), variant(vec![t.clone()])]).unwrap();
        assert_eq!(out, vec![t]);
    }

    #[test]
    fn equal_scores_give_midpoint() {
        let a = track(1, vec![e(0, Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0), 0.5)]);
        let b = track(1, vec![e(0, Box7::new(2.0, 4.0, 0.0, 4.0, 2.0, 1.5, 0.0), 0.5)]);
        let out = tta_merge(&[variant(vec![a]), variant(vec![b])]).unwrap();
        let c = out[0].entries[0].bbox;
        assert_eq!((c.cx, c.cy), (1.0, 2.0));
    }

    #[test]
    fn single_flip_does_not_contaminate() {
        let hs = [0.30, 0.34, 0.38];
        for flipped in 0..3 {
            for top in 0..3 {
                let tracks: Vec<TtaVariant> = (0..3)
                    .map(|k| {
                        let yaw = if k == flipped { hs[k] + PI } else { hs[k] };
                        let score = if k == top { 0.9 } else { 0.5 };
                        variant(vec![track(1, vec![e(0, Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, yaw), score)])])
                    })
                    .collect();
                let got = tta_merge(&tracks).unwrap()[0].entries[0].bbox.yaw;
                assert!((got - 0.34).abs() < 1e-9, "flipped {flipped} top {top}: {got}");
            }
        }
    }

    #[test]
    fn partial_supports_take_the_union() {
        let a = track(1, vec![e(0, Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0), 0.5)]);
        let b = track(1, vec![e(1, Box7::new(1.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0), 0.5)]);
        let out = tta_merge(&[variant(vec![a]), variant(vec![b])]).unwrap();
        assert_eq!(out[0].entries.len(), 2);
        assert!(tta_merge(&[]).is_err());
    }

    proptest! {
        #[test]
        fn merge_is_permutation_invariant_and_bounded(
            boxes in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 3.0..5.0f64, -0.7..0.7f64, 0.05..1.0f64), 1..6),
            rot in 0usize..6,
        ) {
            let vs: Vec<TtaVariant> = boxes
                .iter()
                .map(|&(x, y, l, yaw, s)| variant(vec![track(1, vec![e(0, Box7::new(x, y, 0.0, l, 2.0, 1.5, yaw), s)])]))
                .collect();
            let mut perm = vs.clone();
            perm.rotate_left(rot % vs.len());
            perm.reverse();
            let a = tta_merge(&vs).unwrap();
            let b = tta_merge(&perm).unwrap();
            prop_assert_eq!(&a, &b);
            let m = a[0].entries[0].bbox;
            let (lo, hi) = boxes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, b| (acc.0.min(b.0), acc.1.max(b.0)));
            prop_assert!(m.cx >= lo - 1e-12 && m.cx <= hi + 1e-12);
            let (ylo, yhi) = boxes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, b| (acc.0.min(b.3), acc.1.max(b.3)));
            prop_assert!(m.yaw >= ylo - 1e-12 && m.yaw <= yhi + 1e-12);
        }
    }
}
