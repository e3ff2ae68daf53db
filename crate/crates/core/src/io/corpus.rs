//! On-disk corpus: one directory per sequence.
//!
//! ```text
//! <root>/<sequence_id>/frames.jsonl
//! <root>/<sequence_id>/detections.jsonl
//! <root>/<sequence_id>/gt.jsonl          (optional)
//! <root>/<sequence_id>/points/<frame:06>.lpc
//! ```
//!
//! Point frames hold world coordinates; the stored ego pose is the same as
//! in `frames.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::points::{read_point_frame, write_point_frame};
use super::records::{
    assemble_sequence, detection_records, frame_records, gt_records, read_jsonl, records_to_gt, records_to_tracks,
    track_records, write_jsonl, DetectionRecord, FrameRecord,
};
use crate::assignment::GtTrack;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::sim::SimSequence;
use crate::tracking::{SequenceDetections, Tracklet};

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GT_FILE: &str = "gt.jsonl";
pub const POINTS_DIR: &str = "points";

pub fn point_frame_path(seq_dir: &Path, frame_index: u32) -> PathBuf {
    seq_dir.join(POINTS_DIR).join(format!("{frame_index:06}.lpc"))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes detections, GT and point frames of one simulated sequence.
pub fn write_sim_sequence(root: &Path, seq: &SimSequence) -> Result<PathBuf> {
    let dir = root.join(seq.sequence_id());
    create_dir(&dir.join(POINTS_DIR))?;
    let frames = frame_records(&seq.detections);
    write_jsonl(&dir.join(FRAMES_FILE), &frames)?;
    write_jsonl(&dir.join(DETECTIONS_FILE), &detection_records(&seq.detections))?;
    write_jsonl(&dir.join(GT_FILE), &gt_records(seq.sequence_id(), &frames, &seq.gt))?;
    for f in &seq.detections.frames {
        let cloud = seq.frames.get(f.frame_index as usize).ok_or_else(|| {
            Error::Invalid(format!("sequence {} lacks points for frame {}", seq.sequence_id(), f.frame_index))
        })?;
        write_point_frame(&point_frame_path(&dir, f.frame_index), cloud, &f.ego_pose)?;
    }
    Ok(dir)
}

/// Sequence directories under `root`, sorted by name.
pub fn list_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.join(FRAMES_FILE).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// A sequence as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSequence {
    pub dir: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub detections: SequenceDetections,
    pub gt: Option<Vec<GtTrack>>,
}

impl LoadedSequence {
    pub fn sequence_id(&self) -> &str {
        &self.detections.sequence_id
    }
}

/// `detections_file` overrides `detections.jsonl` (for example with a
/// track file, whose extra fields are ignored here).
pub fn load_sequence(dir: &Path, detections_file: Option<&Path>) -> Result<LoadedSequence> {
    let frames: Vec<FrameRecord> = read_jsonl(&dir.join(FRAMES_FILE))?;
    let det_path = detections_file.map_or_else(|| dir.join(DETECTIONS_FILE), Path::to_path_buf);
    let dets: Vec<DetectionRecord> = read_jsonl(&det_path)?;
    let detections = assemble_sequence(&frames, &dets)?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.is_file() { Some(records_to_gt(&read_jsonl(&gt_path)?)?) } else { None };
    Ok(LoadedSequence { dir: dir.to_path_buf(), frames, detections, gt })
}

/// Loads the point frames listed in the frame table; missing files are an
/// error.
pub fn load_points(seq: &LoadedSequence) -> Result<BTreeMap<u32, PointCloud>> {
    seq.frames
        .iter()
        .map(|f| {
            let (cloud, _) = read_point_frame(&point_frame_path(&seq.dir, f.frame_index))?;
            Ok((f.frame_index, cloud))
        })
        .collect()
}

pub fn write_tracks(path: &Path, seq: &LoadedSequence, tracks: &[Tracklet]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_jsonl(path, &track_records(seq.sequence_id(), &seq.frames, tracks))
}

pub fn read_tracks(path: &Path) -> Result<Vec<Tracklet>> {
    records_to_tracks(&read_jsonl(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_sequence, ScenarioConfig};

    #[test]
    fn sim_sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig { frames_per_sequence: 12, ..ScenarioConfig::default() };
        let seq = generate_sequence(&cfg, 2).unwrap();
        let seq_dir = write_sim_sequence(dir.path(), &seq).unwrap();
        assert_eq!(list_sequences(dir.path()).unwrap(), vec![seq_dir.clone()]);
        let back = load_sequence(&seq_dir, None).unwrap();
        assert_eq!(back.detections, seq.detections);
        assert_eq!(back.gt.as_ref().unwrap().len(), seq.gt.len());
        let pts = load_points(&back).unwrap();
        assert_eq!(pts.len(), 12);
        assert_eq!(pts[&3].len(), seq.frames[3].len());
        std::fs::remove_file(point_frame_path(&seq_dir, 5)).unwrap();
        assert!(matches!(load_points(&back), Err(Error::Io { .. })));
    }
}
