//! JSON-lines box records: detections, tracks and ground truth share one
//! schema, and a separate per-frame record carries timestamps and ego poses.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::assignment::{AssignmentResult, GtEntry, GtTrack};
use crate::error::{Error, Result};
use crate::geometry::{Box7, LabeledBox, ObjectClass, RigidPose};
use crate::tracking::{DetectionFrame, Origin, SequenceDetections, TrackEntry, Tracklet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub sequence_id: String,
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Ground truth only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_points: Option<u32>,
}

impl DetectionRecord {
    /// Field-level checks beyond JSON shape.
    pub fn check(&self) -> std::result::Result<(), String> {
        self.class.parse::<ObjectClass>().map_err(|e| e.to_string())?;
        if let Some(o) = &self.origin {
            o.parse::<Origin>().map_err(|e| e.to_string())?;
        }
        if !self.timestamp_s.is_finite() {
            return Err("timestamp_s must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        let yaw = self.bbox[6];
        if !(yaw > -std::f64::consts::PI && yaw <= std::f64::consts::PI) {
            return Err(format!("yaw {yaw} outside (-pi, pi]"));
        }
        Box7::try_new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3], self.bbox[4], self.bbox[5], yaw)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    pub fn class(&self) -> ObjectClass {
        self.class.parse().expect("checked on read")
    }

    pub fn to_box(&self) -> Box7 {
        Box7::from_array(self.bbox)
    }

    pub fn origin(&self) -> Option<Origin> {
        self.origin.as_deref().map(|o| o.parse().expect("checked on read"))
    }
}

/// Timestamp and ego pose of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub sequence_id: String,
    pub frame_index: u32,
    pub timestamp_s: f64,
    /// Row-major rotation, then translation.
    pub ego_pose: [f64; 12],
}

impl FrameRecord {
    pub fn check(&self) -> std::result::Result<(), String> {
        if !self.timestamp_s.is_finite() || self.ego_pose.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if !RigidPose::from_row_major12(self.ego_pose).is_valid(1e-6) {
            return Err("ego_pose rotation is not orthonormal".into());
        }
        Ok(())
    }
}

/// Records with a `check` method.
pub trait Checked {
    fn check_record(&self) -> std::result::Result<(), String>;
}

impl Checked for DetectionRecord {
    fn check_record(&self) -> std::result::Result<(), String> {
        self.check()
    }
}

impl Checked for FrameRecord {
    fn check_record(&self) -> std::result::Result<(), String> {
        self.check()
    }
}

fn schema(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        location: format!("line {line}"),
        message: message.into(),
    }
}

/// Parses JSON lines. Blank lines are rejected except a final newline.
pub fn parse_jsonl<T: DeserializeOwned + Checked>(text: &str, file: &str) -> Result<Vec<T>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(k, line)| {
            let rec: T = serde_json::from_str(line).map_err(|e| schema(file, k + 1, e.to_string()))?;
            rec.check_record().map_err(|m| schema(file, k + 1, m))?;
            Ok(rec)
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned + Checked>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    std::fs::write(path, to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn frame_records(seq: &SequenceDetections) -> Vec<FrameRecord> {
    seq.frames
        .iter()
        .map(|f| FrameRecord {
            sequence_id: seq.sequence_id.clone(),
            frame_index: f.frame_index,
            timestamp_s: f.timestamp,
            ego_pose: f.ego_pose.to_row_major12(),
        })
        .collect()
}

pub fn detection_records(seq: &SequenceDetections) -> Vec<DetectionRecord> {
    seq.frames
        .iter()
        .flat_map(|f| {
            f.detections.iter().map(move |d| DetectionRecord {
                sequence_id: seq.sequence_id.clone(),
                frame_index: f.frame_index,
                timestamp_s: f.timestamp,
                class: d.class.to_string(),
                bbox: d.bbox.to_array(),
                score: d.score,
                track_id: None,
                origin: None,
                num_points: None,
            })
        })
        .collect()
}

/// Rebuilds one sequence from its frame table and detections.
pub fn assemble_sequence(frames: &[FrameRecord], dets: &[DetectionRecord]) -> Result<SequenceDetections> {
    let Some(first) = frames.first() else {
        return Err(Error::Invalid("sequence has no frame records".into()));
    };
    let sequence_id = first.sequence_id.clone();
    if let Some(r) = frames.iter().find(|r| r.sequence_id != sequence_id) {
        return Err(Error::Invalid(format!("mixed sequence ids {sequence_id} and {}", r.sequence_id)));
    }
    let mut out: Vec<DetectionFrame> = frames
        .iter()
        .map(|r| DetectionFrame {
            frame_index: r.frame_index,
            timestamp: r.timestamp_s,
            ego_pose: RigidPose::from_row_major12(r.ego_pose),
            detections: Vec::new(),
        })
        .collect();
    let base = first.frame_index;
    for d in dets {
        if d.sequence_id != sequence_id {
            return Err(Error::Invalid(format!("detection of sequence {} in {sequence_id}", d.sequence_id)));
        }
        let slot = d
            .frame_index
            .checked_sub(base)
            .and_then(|k| out.get_mut(k as usize))
            .ok_or_else(|| Error::Invalid(format!("detection at frame {} outside the frame table", d.frame_index)))?;
        slot.detections.push(LabeledBox { bbox: d.to_box(), class: d.class(), score: d.score, frame_index: d.frame_index });
    }
    let seq = SequenceDetections { sequence_id, frames: out };
    seq.validate()?;
    Ok(seq)
}

/// Falls back to the frame index when the frame table lacks `f`.
fn timestamp_of(frames: &[FrameRecord], f: u32) -> f64 {
    frames
        .binary_search_by_key(&f, |r| r.frame_index)
        .map_or(f as f64, |k| frames[k].timestamp_s)
}

/// One record per entry, ordered by track id then frame.
pub fn track_records(sequence_id: &str, frames: &[FrameRecord], tracks: &[Tracklet]) -> Vec<DetectionRecord> {
    let mut sorted: Vec<&Tracklet> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.track_id);
    sorted
        .into_iter()
        .flat_map(|t| {
            t.entries.iter().map(move |e| DetectionRecord {
                sequence_id: sequence_id.to_string(),
                frame_index: e.frame_index,
                timestamp_s: timestamp_of(frames, e.frame_index),
                class: t.class.to_string(),
                bbox: e.bbox.to_array(),
                score: e.score,
                track_id: Some(t.track_id),
                origin: Some(e.origin.to_string()),
                num_points: None,
            })
        })
        .collect()
}

fn group_by_track<'a>(records: &'a [DetectionRecord], what: &str) -> Result<BTreeMap<u64, Vec<&'a DetectionRecord>>> {
    let mut m: BTreeMap<u64, Vec<&'a DetectionRecord>> = BTreeMap::new();
    for r in records {
        let id = r
            .track_id
            .ok_or_else(|| Error::Invalid(format!("{what} record at frame {} lacks track_id", r.frame_index)))?;
        m.entry(id).or_default().push(r);
    }
    for (id, v) in m.iter_mut() {
        v.sort_by_key(|r| r.frame_index);
        if v.windows(2).any(|w| w[0].frame_index == w[1].frame_index) {
            return Err(Error::Invalid(format!("{what} {id} has two boxes in one frame")));
        }
        if v.iter().any(|r| r.class != v[0].class) {
            return Err(Error::Invalid(format!("{what} {id} changes class")));
        }
    }
    Ok(m)
}

pub fn records_to_tracks(records: &[DetectionRecord]) -> Result<Vec<Tracklet>> {
    group_by_track(records, "track")?
        .into_iter()
        .map(|(id, v)| {
            Ok(Tracklet {
                track_id: id,
                class: v[0].class(),
                entries: v
                    .iter()
                    .map(|r| TrackEntry {
                        frame_index: r.frame_index,
                        bbox: r.to_box(),
                        score: r.score,
                        origin: r.origin().unwrap_or(Origin::Detected),
                    })
                    .collect(),
            })
        })
        .collect()
}

pub fn gt_records(sequence_id: &str, frames: &[FrameRecord], gts: &[GtTrack]) -> Vec<DetectionRecord> {
    gts.iter()
        .flat_map(|g| {
            g.entries.iter().map(move |e| DetectionRecord {
                sequence_id: sequence_id.to_string(),
                frame_index: e.frame_index,
                timestamp_s: timestamp_of(frames, e.frame_index),
                class: g.class.to_string(),
                bbox: e.bbox.to_array(),
                score: 1.0,
                track_id: Some(g.gt_track_id),
                origin: None,
                num_points: Some(e.num_points),
            })
        })
        .collect()
}

pub fn records_to_gt(records: &[DetectionRecord]) -> Result<Vec<GtTrack>> {
    Ok(group_by_track(records, "gt track")?
        .into_iter()
        .map(|(id, v)| GtTrack {
            gt_track_id: id,
            class: v[0].class(),
            entries: v
                .iter()
                .map(|r| GtEntry { frame_index: r.frame_index, bbox: r.to_box(), num_points: r.num_points.unwrap_or(0) })
                .collect(),
        })
        .collect())
}

/// One track's assignment outcome, write-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub sequence_id: String,
    pub track_id: u64,
    pub matched: bool,
    /// `[gt id, TIoU]`, best first.
    pub candidates: Vec<(u64, f64)>,
    pub targets: Vec<TargetRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub frame_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_track_id: Option<u64>,
    pub iou: f64,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<[f64; 7]>,
}

pub fn assignment_records(sequence_id: &str, result: &AssignmentResult) -> Vec<AssignmentRecord> {
    result
        .tracks
        .iter()
        .map(|a| AssignmentRecord {
            sequence_id: sequence_id.to_string(),
            track_id: a.track_id,
            matched: a.matched,
            candidates: a.candidates.clone(),
            targets: a
                .proposals
                .iter()
                .map(|t| TargetRecord {
                    frame_index: t.frame_index,
                    gt_track_id: t.gt.map(|g| g.0),
                    iou: t.iou,
                    q: t.q,
                    residual: t.residual,
                })
                .collect(),
        })
        .collect()
}
