//! Detection AP, CLEAR-MOT and failure-profile inspection.

mod ap;
mod inspection;
mod mot;
mod plot;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::GtTrack;
use crate::geometry::{bev_iou, iou3d, Box7, ObjectClass};
use crate::tracking::Tracklet;

pub use ap::{ap_from_curve, average_precision, greedy_match, pr_curve, GreedyMatch, Interpolation};
pub use inspection::{
    cap_per_frame, inspection, life_cycle_analysis, motion_state, totally_missed, InspectionConfig, InspectionReport,
    LifeCycleBin, LifeCycleConfig, LifeCycleReport, MotionConfig, MotionState,
};
pub use mot::{clear_mot, MotCounts};
pub use plot::life_cycle_svg;

/// A box with the keys evaluation needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalBox {
    /// Sequence position in the evaluated corpus.
    pub seq: usize,
    pub frame: u32,
    /// Track id (prediction) or GT track id.
    pub id: u64,
    pub class: ObjectClass,
    pub bbox: Box7,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    Iou3d,
    Bev,
}

impl IouKind {
    pub fn eval(self, a: &Box7, b: &Box7) -> f64 {
        match self {
            IouKind::Iou3d => iou3d(a, b),
            IouKind::Bev => bev_iou(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassThresholds {
    pub vehicle: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        Self {
            vehicle: 0.7,
            pedestrian: 0.5,
            cyclist: 0.5,
        }
    }
}

impl ClassThresholds {
    pub fn for_class(&self, c: ObjectClass) -> f64 {
        match c {
            ObjectClass::Vehicle => self.vehicle,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }
}

pub(crate) fn frame_index_of(boxes: &[EvalBox]) -> HashMap<(usize, u32), Vec<usize>> {
    let mut m: HashMap<(usize, u32), Vec<usize>> = HashMap::new();
    for (i, b) in boxes.iter().enumerate() {
        m.entry((b.seq, b.frame)).or_default().push(i);
    }
    m
}

/// Flattens predicted tracks.
pub fn track_boxes(seq: usize, tracks: &[Tracklet]) -> Vec<EvalBox> {
    tracks
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |e| EvalBox {
                seq,
                frame: e.frame_index,
                id: t.track_id,
                class: t.class,
                bbox: e.bbox,
                score: e.score,
            })
        })
        .collect()
}

/// Flattens GT tracks (score 1).
pub fn gt_boxes(seq: usize, gts: &[GtTrack]) -> Vec<EvalBox> {
    gts.iter()
        .flat_map(|g| {
            g.entries.iter().map(move |e| EvalBox {
                seq,
                frame: e.frame_index,
                id: g.gt_track_id,
                class: g.class,
                bbox: e.bbox,
                score: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub interpolation: Interpolation,
    /// Matching IoU for AP (3D and BEV alike).
    pub ap_iou: ClassThresholds,
    /// Matching 3D IoU for CLEAR-MOT.
    pub mot_iou: ClassThresholds,
    pub inspection: InspectionConfig,
    pub life_cycle: LifeCycleConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::AllPoint,
            ap_iou: ClassThresholds::default(),
            mot_iou: ClassThresholds::default(),
            inspection: InspectionConfig::default(),
            life_cycle: LifeCycleConfig::default(),
        }
    }
}

/// One sequence's predictions and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalSequence<'a> {
    pub preds: &'a [Tracklet],
    pub gts: &'a [GtTrack],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ObjectClass,
    pub num_gt: usize,
    pub num_pred: usize,
    /// `None` without GT of this class.
    pub ap_3d: Option<f64>,
    pub ap_bev: Option<f64>,
    pub mota: f64,
    pub motp: f64,
    pub ids_pct: f64,
    pub mot: MotCounts,
    pub inspection: InspectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_sequences: usize,
    pub classes: Vec<ClassReport>,
    pub life_cycle: LifeCycleReport,
}

/// Pools all sequences; CLEAR-MOT counts are summed per sequence.
pub fn evaluate(seqs: &[EvalSequence<'_>], cfg: &EvalConfig) -> EvalReport {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (s, q) in seqs.iter().enumerate() {
        preds.extend(track_boxes(s, q.preds));
        gts.extend(gt_boxes(s, q.gts));
    }
    let mut classes = Vec::new();
    for class in ObjectClass::ALL {
        let cp: Vec<EvalBox> = preds.iter().filter(|p| p.class == class).copied().collect();
        let cg: Vec<EvalBox> = gts.iter().filter(|g| g.class == class).copied().collect();
        if cp.is_empty() && cg.is_empty() {
            continue;
        }
        let thr = cfg.ap_iou.for_class(class);
        let ap_3d = average_precision(&cp, &cg, IouKind::Iou3d, thr, cfg.interpolation).ok();
        let ap_bev = average_precision(&cp, &cg, IouKind::Bev, thr, cfg.interpolation).ok();
        let mut mot = MotCounts::default();
        for q in seqs {
            let tp: Vec<Tracklet> = q.preds.iter().filter(|t| t.class == class).cloned().collect();
            let tg: Vec<GtTrack> = q.gts.iter().filter(|t| t.class == class).cloned().collect();
            mot.add(&clear_mot(&tp, &tg, &cfg.mot_iou));
        }
        classes.push(ClassReport {
            class,
            num_gt: cg.len(),
            num_pred: cp.len(),
            ap_3d,
            ap_bev,
            mota: mot.mota(),
            motp: mot.motp(),
            ids_pct: mot.ids_pct(),
            mot,
            inspection: inspection(&preds, &gts, class, &cfg.inspection),
        });
    }
    let kept = cap_per_frame(&preds, cfg.inspection.cap_per_frame);
    EvalReport {
        num_sequences: seqs.len(),
        classes,
        life_cycle: life_cycle_analysis(&kept, &gts, &cfg.life_cycle),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sequences: {}", self.num_sequences);
        for c in &self.classes {
            let i = &c.inspection;
            let _ = writeln!(s, "[{}] gt={} pred={}", c.class, c.num_gt, c.num_pred);
            let _ = writeln!(s, "  AP_3D={} AP_BEV={}", opt(c.ap_3d), opt(c.ap_bev));
            let _ = writeln!(s, "  MOTA={:.2} MOTP={:.2} IDS%={:.3} (switches {})", c.mota, c.motp, c.ids_pct, c.mot.id_switches);
            let _ = writeln!(
                s,
                "  T-FN={} ({:.4}) H-FP={} ({:.4}) H-TP={} ({:.4}) s_t={:.4}{}",
                i.t_fn,
                i.t_fn_ratio,
                i.h_fp,
                i.h_fp_ratio,
                i.h_tp,
                i.h_tp_ratio,
                i.s_t,
                if i.s_t_fallback { " (recall below 50%)" } else { "" }
            );
        }
        let _ = writeln!(s, "life cycle (track length in seconds):");
        for b in &self.life_cycle.bins {
            let hi = b.hi_s.map_or_else(|| "inf".to_string(), |h| format!("{h:.1}"));
            let _ = writeln!(s, "  [{:.1}, {hi}) tracks={} inferior={}", b.lo_s, b.tracks, b.inferior);
        }
        let _ = writeln!(s, "inferior tracks: {}", self.life_cycle.inferior.len());
        s
    }

    /// One row per class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "class,num_gt,num_pred,ap_3d,ap_bev,mota,motp,ids_pct,id_switches,t_fn,t_fn_ratio,h_fp,h_fp_ratio,h_tp,h_tp_ratio,s_t\n",
        );
        let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for c in &self.classes {
            let i = &c.inspection;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.class,
                c.num_gt,
                c.num_pred,
                o(c.ap_3d),
                o(c.ap_bev),
                c.mota,
                c.motp,
                c.ids_pct,
                c.mot.id_switches,
                i.t_fn,
                i.t_fn_ratio,
                i.h_fp,
                i.h_fp_ratio,
                i.h_tp,
                i.h_tp_ratio,
                i.s_t
            );
        }
        s
    }
}
