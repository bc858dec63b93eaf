//! Core primitives for graph visual question answering over driving scenes.
//!
//! Everything in this crate is pure and allocation-only: object-tag parsing,
//! the per-frame QA dependency graph, prompt/context assembly, deterministic
//! stub answers, box-center matching and the text metric suite. File formats,
//! the model transport and the CLI live in the `gvqa-harness` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod detection;
pub mod diag;
pub mod graph;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod preset;
pub mod prompt;
pub mod report;
pub mod tag;

pub use diag::{Diagnostic, Severity};
pub use graph::{ContextStrategy, GraphError, GvqaGraph};
pub use model::{AnswerForm, KeyFrame, KeyObjectInfo, QaNode, Scene, Stage};
pub use prompt::{AssembledPrompt, ContextForm, PromptStyle};
pub use tag::{Camera, ObjectTag};

/// Image width in pixels for every nuScenes camera.
pub const IMAGE_WIDTH: f64 = 1600.0;
/// Image height in pixels for every nuScenes camera.
pub const IMAGE_HEIGHT: f64 = 900.0;

/// Sentinel recorded for a node whose backend query failed.
pub const UNANSWERED: &str = "UNANSWERED";
