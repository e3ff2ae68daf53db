//! Bidirectional multi-object tracking.
//!
//! Forward pass: constant-velocity Kalman tracks, IoU-gated bipartite
//! association, and an immortal lifecycle that fills unmatched frames with
//! motion-model pseudo-boxes. After the pass tracks are extended into the
//! future. A reverse-time pass over each track then estimates backward motion
//! and extends the track into the past.

mod kalman;
mod tracker;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box7, LabeledBox, ObjectClass, RigidPose};

pub use kalman::{kf_predict, kf_update, KalmanState, NoiseConfig, StateCov, StateVec};
pub use tracker::{associate, backtrace_extend, run_bidirectional, run_forward, run_tracker, Association};

/// How a track entry was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Detected,
    Filled,
    ForwardExt,
    BackwardExt,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Detected => "detected",
            Origin::Filled => "filled",
            Origin::ForwardExt => "forward_ext",
            Origin::BackwardExt => "backward_ext",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Origin::Detected => 0,
            Origin::Filled => 1,
            Origin::ForwardExt => 2,
            Origin::BackwardExt => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Origin::Detected, Origin::Filled, Origin::ForwardExt, Origin::BackwardExt]
            .get(c as usize)
            .copied()
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detected" => Ok(Origin::Detected),
            "filled" => Ok(Origin::Filled),
            "forward_ext" => Ok(Origin::ForwardExt),
            "backward_ext" => Ok(Origin::BackwardExt),
            other => Err(Error::Invalid(format!("unknown origin {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEntry {
    pub frame_index: u32,
    pub bbox: Box7,
    pub score: f64,
    pub origin: Origin,
}

/// An identity-bearing sequence of per-frame boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub track_id: u64,
    pub class: ObjectClass,
    pub entries: Vec<TrackEntry>,
}

impl Tracklet {
    pub fn first_frame(&self) -> Option<u32> {
        self.entries.first().map(|e| e.frame_index)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.entries.last().map(|e| e.frame_index)
    }

    pub fn entry_at(&self, frame: u32) -> Option<&TrackEntry> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame_index)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// `(first, last)` frame of Detected entries.
    pub fn detected_range(&self) -> Option<(u32, u32)> {
        let mut it = self.entries.iter().filter(|e| e.origin == Origin::Detected);
        let first = it.next()?.frame_index;
        let last = it.last().map_or(first, |e| e.frame_index);
        Some((first, last))
    }

    /// Frames from first to last Detected entry, inclusive.
    pub fn detected_span(&self) -> u32 {
        self.detected_range().map_or(0, |(a, b)| b - a + 1)
    }

    /// Frame indices strictly increasing with no holes.
    pub fn is_gap_free(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[1].frame_index == w[0].frame_index + 1)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].frame_index > w[0].frame_index)
    }

    pub fn as_labeled_boxes(&self) -> impl Iterator<Item = LabeledBox> + '_ {
        self.entries.iter().map(move |e| LabeledBox {
            bbox: e.bbox,
            class: self.class,
            score: e.score,
            frame_index: e.frame_index,
        })
    }
}

/// One frame of detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame_index: u32,
    pub timestamp: f64,
    pub ego_pose: RigidPose,
    pub detections: Vec<LabeledBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDetections {
    pub sequence_id: String,
    pub frames: Vec<DetectionFrame>,
}

impl SequenceDetections {
    /// Frames must be consecutive with strictly increasing timestamps.
    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if w[1].frame_index != w[0].frame_index + 1 {
                return Err(Error::Invalid(format!(
                    "sequence {}: frame {} follows {}",
                    self.sequence_id, w[1].frame_index, w[0].frame_index
                )));
            }
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::Invalid(format!(
                    "sequence {}: timestamps not strictly increasing at frame {}",
                    self.sequence_id, w[1].frame_index
                )));
            }
        }
        for f in &self.frames {
            if let Some(d) = f.detections.iter().find(|d| d.frame_index != f.frame_index) {
                return Err(Error::Invalid(format!(
                    "detection tagged frame {} stored in frame {}",
                    d.frame_index, f.frame_index
                )));
            }
        }
        Ok(())
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.frames.first().map(|f| f.frame_index)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.frames.last().map(|f| f.frame_index)
    }

    pub fn frame(&self, index: u32) -> Option<&DetectionFrame> {
        let first = self.first_frame()?;
        index
            .checked_sub(first)
            .and_then(|off| self.frames.get(off as usize))
    }
}

/// Which extensions the tracker applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackMode {
    /// Filled gaps only; nothing beyond the first/last detection.
    None,
    Forward,
    Bidirectional,
}

impl std::str::FromStr for TrackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TrackMode::None),
            "forward" => Ok(TrackMode::Forward),
            "bidirectional" => Ok(TrackMode::Bidirectional),
            other => Err(Error::Invalid(format!("unknown track mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Minimum 3D IoU for an association to stand.
    pub gate_iou: f64,
    /// Tracks whose detected span exceeds this are extended to the sequence ends.
    pub long_track_frames: u32,
    /// Extension length for shorter tracks.
    pub short_ext_frames: u32,
    /// Pseudo-boxes farther than this from the ego (BEV) end a track.
    pub perception_radius_m: f64,
    /// Score multiplier for filled and extended entries.
    pub score_decay: f64,
    pub noise: NoiseConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_iou: 0.1,
            long_track_frames: 100,
            short_ext_frames: 20,
            perception_radius_m: 85.0,
            score_decay: 0.5,
            noise: NoiseConfig::default(),
        }
    }
}
