//! File formats, run bookkeeping and the command layer around
//! `sobolev-core`: PNG and WAV IO, binary checkpoints, LLFF pose files,
//! `key = value` configs, CSV metric logs and JSON run manifests.

pub mod audio;
pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod image;
pub mod report;
pub mod scene;
pub mod settings;

pub use error::{FormatError, Result};
