//! CLEAR-MOT accuracy, precision and identity switches.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ClassThresholds;
use crate::assignment::GtTrack;
use crate::geometry::{iou3d, Box7, ObjectClass};
use crate::lap;
use crate::tracking::Tracklet;

/// Raw CLEAR-MOT counts; add across sequences, then call the ratio methods.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotCounts {
    pub num_gt: usize,
    pub matches: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    /// Sum of `1 − iou3d` over matches.
    pub distance_sum: f64,
}

impl MotCounts {
    pub fn add(&mut self, o: &MotCounts) {
        self.num_gt += o.num_gt;
        self.matches += o.matches;
        self.false_negatives += o.false_negatives;
        self.false_positives += o.false_positives;
        self.id_switches += o.id_switches;
        self.distance_sum += o.distance_sum;
    }

    /// Percent; 100 with no GT and no false positives.
    pub fn mota(&self) -> f64 {
        let errors = (self.false_negatives + self.false_positives + self.id_switches) as f64;
        if self.num_gt == 0 {
            return if errors == 0.0 { 100.0 } else { f64::NEG_INFINITY };
        }
        100.0 * (1.0 - errors / self.num_gt as f64)
    }

    /// Mean `1 − iou3d` over matches, percent; 0 without matches.
    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            100.0 * self.distance_sum / self.matches as f64
        }
    }

    pub fn ids_pct(&self) -> f64 {
        if self.num_gt == 0 {
            0.0
        } else {
            100.0 * self.id_switches as f64 / self.num_gt as f64
        }
    }
}

type Frames = BTreeMap<u32, Vec<(u64, ObjectClass, Box7)>>;

/// CLEAR-MOT over one sequence. Matches persisting from the previous frame
/// are kept while their IoU clears the class threshold; the rest are
/// assigned by minimum total `1 − IoU`. A GT matched to a different track
/// than last time counts one switch.
pub fn clear_mot(tracks: &[Tracklet], gts: &[GtTrack], thresholds: &ClassThresholds) -> MotCounts {
    let mut pred_frames: Frames = BTreeMap::new();
    for t in tracks {
        for e in &t.entries {
            pred_frames.entry(e.frame_index).or_default().push((t.track_id, t.class, e.bbox));
        }
    }
    let mut gt_frames: Frames = BTreeMap::new();
    for g in gts {
        for e in &g.entries {
            gt_frames.entry(e.frame_index).or_default().push((g.gt_track_id, g.class, e.bbox));
        }
    }
    let mut all_frames: Vec<u32> = pred_frames.keys().chain(gt_frames.keys()).copied().collect();
    all_frames.sort_unstable();
    all_frames.dedup();

    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut c = MotCounts::default();
    let empty = Vec::new();
    for f in all_frames {
        let mut gl = gt_frames.get(&f).unwrap_or(&empty).clone();
        let mut pl = pred_frames.get(&f).unwrap_or(&empty).clone();
        gl.sort_by_key(|x| x.0);
        pl.sort_by_key(|x| x.0);
        c.num_gt += gl.len();
        let mut g_used = vec![false; gl.len()];
        let mut p_used = vec![false; pl.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

        for (gi, g) in gl.iter().enumerate() {
            let Some(&tid) = last.get(&g.0) else { continue };
            if let Some(pi) = pl.iter().position(|p| p.0 == tid && p.1 == g.1) {
                let v = iou3d(&g.2, &pl[pi].2);
                if !p_used[pi] && v >= thresholds.for_class(g.1) {
                    g_used[gi] = true;
                    p_used[pi] = true;
                    pairs.push((gi, pi, v));
                }
            }
        }

        for class in ObjectClass::ALL {
            let thr = thresholds.for_class(class);
            let gi: Vec<usize> = (0..gl.len()).filter(|&i| !g_used[i] && gl[i].1 == class).collect();
            let pi: Vec<usize> = (0..pl.len()).filter(|&i| !p_used[i] && pl[i].1 == class).collect();
            if gi.is_empty() || pi.is_empty() {
                continue;
            }
            let ious: Vec<Vec<f64>> = gi.iter().map(|&a| pi.iter().map(|&b| iou3d(&gl[a].2, &pl[b].2)).collect()).collect();
            let cost: Vec<Vec<f64>> = ious
                .iter()
                .map(|row| row.iter().map(|&v| if v >= thr { 1.0 - v } else { 2.0 }).collect())
                .collect();
            for (r, k) in lap::solve(&cost) {
                let v = ious[r][k];
                if v >= thr {
                    let (a, b) = (gi[r], pi[k]);
                    g_used[a] = true;
                    p_used[b] = true;
                    if last.get(&gl[a].0).is_some_and(|&prev| prev != pl[b].0) {
                        c.id_switches += 1;
                    }
                    pairs.push((a, b, v));
                }
            }
        }

        for &(a, b, v) in &pairs {
            last.insert(gl[a].0, pl[b].0);
            c.matches += 1;
            c.distance_sum += 1.0 - v;
        }
        c.false_negatives += g_used.iter().filter(|u| !**u).count();
        c.false_positives += p_used.iter().filter(|u| !**u).count();
    }
    c
}
