//! IO, backends and the run/eval pipeline around `gvqa-core`.

pub mod backend;
pub mod config;
pub mod dataset;
pub mod detections;
pub mod io;
pub mod predictions;
pub mod report_io;
pub mod runner;
