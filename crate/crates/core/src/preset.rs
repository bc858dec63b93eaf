//! Named ablation settings.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ContextStrategy;
use crate::prompt::{ContextForm, PromptStyle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VersionPreset {
    Baseline,
    A,
    B,
    C,
    D,
    E,
}

/// The part of a run configuration a preset fixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetFragment {
    pub strategy: ContextStrategy,
    pub style: PromptStyle,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unknown version preset `{0}` (expected baseline, A, B, C, D or E)")]
pub struct UnknownPreset(pub String);

impl VersionPreset {
    pub const ALL: [VersionPreset; 6] = [
        VersionPreset::Baseline,
        VersionPreset::A,
        VersionPreset::B,
        VersionPreset::C,
        VersionPreset::D,
        VersionPreset::E,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VersionPreset::Baseline => "baseline",
            VersionPreset::A => "A",
            VersionPreset::B => "B",
            VersionPreset::C => "C",
            VersionPreset::D => "D",
            VersionPreset::E => "E",
        }
    }

    pub fn fragment(self) -> PresetFragment {
        use ContextStrategy::*;
        let raw = PromptStyle::new(ContextForm::RawQa);
        let declarative = PromptStyle::new(ContextForm::Declarative);
        let (strategy, style) = match self {
            VersionPreset::Baseline => (BaselineNone, raw),
            VersionPreset::A => (Cot, raw),
            VersionPreset::B => (CotN0, raw),
            VersionPreset::C => (Got, raw),
            VersionPreset::D => (Got, declarative),
            VersionPreset::E => (
                Got,
                PromptStyle {
                    include_format_instruction: true,
                    include_detections: true,
                    ..declarative
                },
            ),
        };
        PresetFragment { strategy, style }
    }
}

pub fn preset(version: VersionPreset) -> PresetFragment {
    version.fragment()
}

impl fmt::Display for VersionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VersionPreset {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t
            .strip_prefix("version")
            .or_else(|| t.strip_prefix("Version"))
            .unwrap_or(t)
            .trim();
        VersionPreset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownPreset(s.into()))
    }
}
