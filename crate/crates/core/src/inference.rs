//! Messages exchanged with a model backend, and the deterministic stub
//! answers used to exercise the harness without a model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::QaNode;
use crate::tag::Camera;

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceRequest {
    pub frame_id: String,
    pub node_id: String,
    pub prompt: String,
    pub image_refs: BTreeMap<Camera, String>,
    pub timeout: Duration,
    pub attempt: u32,
}

impl InferenceRequest {
    pub fn check(&self) -> Result<(), String> {
        if self.prompt.is_empty() {
            return Err(format!("{}: empty prompt", self.node_id));
        }
        if let Some(cam) = Camera::ALL.iter().find(|c| !self.image_refs.contains_key(c)) {
            return Err(format!("{}: no image reference for {cam}", self.node_id));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResponse {
    pub node_id: String,
    pub answer: String,
    pub latency: Duration,
    pub backend_id: String,
}

/// Deterministic stand-ins for a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMode {
    /// Answer with the ground truth verbatim.
    EchoGt,
    /// Same text for every question.
    Fixed(String),
    /// Ground truth with each whitespace token independently replaced by
    /// `XX` with probability `rate`.
    Corrupt { rate: f64, seed: u64 },
}

pub const CORRUPT_TOKEN: &str = "XX";

#[derive(Clone, Debug, PartialEq, Error)]
pub enum StubError {
    #[error("node `{0}` has no ground-truth answer to echo")]
    MissingGroundTruth(String),
    #[error("corruption rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("cannot parse stub mode `{0}` (expected echo, fixed:<text> or corrupt:<rate>)")]
    Parse(String),
}

impl StubMode {
    pub fn corrupt(rate: f64, seed: u64) -> Result<Self, StubError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(StubError::BadRate(rate));
        }
        Ok(StubMode::Corrupt { rate, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            StubMode::Corrupt { rate, .. } => StubMode::Corrupt { rate, seed },
            other => other,
        }
    }
}

impl fmt::Display for StubMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StubMode::EchoGt => f.write_str("echo"),
            StubMode::Fixed(t) => write!(f, "fixed:{t}"),
            StubMode::Corrupt { rate, seed } => write!(f, "corrupt:{rate}:{seed}"),
        }
    }
}

impl FromStr for StubMode {
    type Err = StubError;

    /// `echo`, `fixed:<text>`, `corrupt:<rate>` or `corrupt:<rate>:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind.to_ascii_lowercase().as_str() {
            "echo" | "echo_gt" if arg.is_empty() => Ok(StubMode::EchoGt),
            "fixed" => Ok(StubMode::Fixed(arg.to_string())),
            "corrupt" => {
                let (rate, seed) = arg.split_once(':').unwrap_or((arg, "0"));
                let rate: f64 = rate.parse().map_err(|_| StubError::Parse(s.into()))?;
                let seed: u64 = seed.parse().map_err(|_| StubError::Parse(s.into()))?;
                StubMode::corrupt(rate, seed)
            }
            _ => Err(StubError::Parse(s.into())),
        }
    }
}

/// Uniform draw in [0, 1) keyed by everything that identifies one token.
fn keyed_uniform(seed: u64, frame_id: &str, node_id: &str, token: usize) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(frame_id.as_bytes());
    h.update([0u8]);
    h.update(node_id.as_bytes());
    h.update([0u8]);
    h.update((token as u64).to_le_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// The stub's answer for `node`. Whitespace between tokens is preserved.
pub fn stub_answer(node: &QaNode, frame_id: &str, mode: &StubMode) -> Result<String, StubError> {
    let gt = || {
        node.gt_answer
            .as_deref()
            .ok_or_else(|| StubError::MissingGroundTruth(node.node_id.clone()))
    };
    match mode {
        StubMode::EchoGt => gt().map(str::to_string),
        StubMode::Fixed(text) => Ok(text.clone()),
        StubMode::Corrupt { rate, seed } => {
            if !(0.0..=1.0).contains(rate) {
                return Err(StubError::BadRate(*rate));
            }
            let gt = gt()?;
            let mut out = String::with_capacity(gt.len());
            let mut token = 0;
            let mut rest = gt;
            while !rest.is_empty() {
                let ws = rest.len() - rest.trim_start().len();
                out.push_str(&rest[..ws]);
                rest = &rest[ws..];
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                if end == 0 {
                    break;
                }
                if keyed_uniform(*seed, frame_id, &node.node_id, token) < *rate {
                    out.push_str(CORRUPT_TOKEN);
                } else {
                    out.push_str(&rest[..end]);
                }
                rest = &rest[end..];
                token += 1;
            }
            Ok(out)
        }
    }
}
