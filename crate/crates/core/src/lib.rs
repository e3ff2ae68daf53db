//! Track-centric offline post-processing for LiDAR 3D object detection.
//!
//! The crate turns per-frame detections into bidirectionally extended tracks,
//! generates track-level training targets and serialized track samples,
//! refines box poses by multi-way shape registration, and evaluates the
//! results. A synthetic world generator drives the whole pipeline for tests.

pub mod error;
pub mod assignment;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod lap;
pub mod postprocess;
pub mod rng;
pub mod sim;
pub mod spatial;
pub mod tco;
pub mod tracking;

pub use error::{Error, Result};
