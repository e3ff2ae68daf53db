//! Pipeline file formats: JSON-lines box records, binary point frames,
//! the track-sample container, the TOML configuration and the corpus
//! directory layout.

pub mod config;
pub mod corpus;
pub mod points;
pub mod records;
pub mod samples;
