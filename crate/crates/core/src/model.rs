//! Scenes, key frames, QA nodes and the key-object table.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::diag::Diagnostic;
use crate::tag::{in_image_bounds, scan_object_tags, Camera, ObjectTag};

/// QA category. The declaration order is the order stages are concatenated
/// into a frame's QA list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Perception,
    Prediction,
    Planning,
    Behavior,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Perception, Stage::Prediction, Stage::Planning, Stage::Behavior];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Perception => "perception",
            Stage::Prediction => "prediction",
            Stage::Planning => "planning",
            Stage::Behavior => "behavior",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerForm {
    Closed,
    Open,
}

/// Lowercase, drop terminal punctuation, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let trimmed = lowered
        .trim()
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?' | ',' | ';' | ':') || c.is_whitespace());
    let mut out = String::with_capacity(trimmed.len());
    for word in trimmed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Decides which questions are scored by exact match: those whose
/// normalized ground-truth answer is in the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedAnswerRule {
    pub vocabulary: Vec<String>,
}

impl Default for ClosedAnswerRule {
    fn default() -> Self {
        Self {
            vocabulary: ["yes", "no", "a", "b", "c", "d"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl ClosedAnswerRule {
    pub fn classify(&self, gt_answer: Option<&str>) -> AnswerForm {
        match gt_answer {
            Some(a) => {
                let norm = normalize_answer(a);
                if self.vocabulary.iter().any(|v| normalize_answer(v) == norm) {
                    AnswerForm::Closed
                } else {
                    AnswerForm::Open
                }
            }
            None => AnswerForm::Open,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn is_ordered(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    /// Containment with a slack of `tol` pixels on every side.
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        x >= self.x1 - tol && x <= self.x2 + tol && y >= self.y1 - tol && y <= self.y2 + tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyObjectInfo {
    pub tag: ObjectTag,
    pub bbox: BBox,
    pub category: String,
    pub moving_state: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaNode {
    /// `<frame_id>#<index>`, unique within the dataset.
    pub node_id: String,
    /// Position in the frame's QA list.
    pub index: usize,
    pub stage: Stage,
    pub question: String,
    /// `None` when the source omitted the answer; such nodes are kept and flagged.
    pub gt_answer: Option<String>,
    pub referenced_tags: Vec<ObjectTag>,
    pub answer_form: AnswerForm,
}

pub fn node_id(frame_id: &str, index: usize) -> String {
    format!("{frame_id}#{index}")
}

impl QaNode {
    pub fn new(
        frame_id: &str,
        index: usize,
        stage: Stage,
        question: impl Into<String>,
        gt_answer: Option<String>,
        rule: &ClosedAnswerRule,
    ) -> Self {
        let question = question.into();
        let referenced_tags = scan_object_tags(&question).into_tags();
        let answer_form = rule.classify(gt_answer.as_deref());
        Self {
            node_id: node_id(frame_id, index),
            index,
            stage,
            question,
            gt_answer,
            referenced_tags,
            answer_form,
        }
    }

    pub fn references(&self, id: &str) -> bool {
        self.referenced_tags.iter().any(|t| t.id == id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyFrame {
    pub frame_id: String,
    pub camera_images: BTreeMap<Camera, String>,
    /// In source order; look up by c-identifier with [`KeyFrame::key_object`].
    pub key_objects: Vec<KeyObjectInfo>,
    pub qa_list: Vec<QaNode>,
    /// Problems found while parsing that did not prevent materializing the frame.
    pub parse_diagnostics: Vec<Diagnostic>,
}

impl KeyFrame {
    pub fn key_object(&self, id: &str) -> Option<&KeyObjectInfo> {
        self.key_objects.iter().find(|k| k.tag.id == id)
    }

    pub fn node(&self, node_id: &str) -> Option<&QaNode> {
        self.qa_list.iter().find(|n| n.node_id == node_id)
    }

    /// The frame's ground-truth key objects as tags.
    pub fn key_object_tags(&self) -> Vec<ObjectTag> {
        self.key_objects.iter().map(|k| k.tag.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub description: Option<String>,
    pub frames: Vec<KeyFrame>,
}

/// Consistency checks for one frame. Nothing here is fatal.
pub fn validate_frame(frame: &KeyFrame) -> Vec<Diagnostic> {
    let loc = frame.frame_id.as_str();
    let mut out = frame.parse_diagnostics.clone();

    for cam in Camera::ALL {
        if !frame.camera_images.contains_key(&cam) {
            out.push(Diagnostic::warning(
                "missing-camera",
                loc,
                format!("no image for {cam}"),
            ));
        }
    }
    if frame.qa_list.is_empty() {
        out.push(Diagnostic::warning("empty-qa", loc, "frame has no QA pairs"));
    }

    for obj in &frame.key_objects {
        let t = &obj.tag;
        if !obj.bbox.is_ordered() {
            out.push(Diagnostic::warning(
                "bbox-order",
                loc,
                format!("{t}: box corners not ordered"),
            ));
        } else if !obj.bbox.contains(t.x, t.y, 1.0) {
            out.push(Diagnostic::warning(
                "bbox-center",
                loc,
                format!("{t}: tag center lies outside its box"),
            ));
        }
    }

    for node in &frame.qa_list {
        let nloc = node.node_id.as_str();
        if node.gt_answer.is_none() {
            out.push(Diagnostic::warning("missing-answer", nloc, "no ground-truth answer"));
        }
        let scan = scan_object_tags(&node.question);
        for rejected in &scan.rejected {
            let code = match rejected.error {
                crate::tag::TagError::OutOfBounds { .. } => "tag-out-of-bounds",
                _ => "bad-tag",
            };
            out.push(Diagnostic::warning(
                code,
                nloc,
                format!("{}: {}", rejected.raw, rejected.error),
            ));
        }
        for (_, t) in &scan.tags {
            if !in_image_bounds(t.x, t.y) {
                // unreachable through the scanner, kept for hand-built nodes
                out.push(Diagnostic::warning("tag-out-of-bounds", nloc, format!("{t}")));
            }
            if frame.key_object(&t.id).is_none() {
                out.push(Diagnostic::warning(
                    "dangling-tag",
                    nloc,
                    format!("{} is not in the frame's key objects", t.id),
                ));
            }
        }
    }
    out
}

/// Moves every `every`-th item (starting at `offset`) to the second list.
pub fn split_every<T>(items: Vec<T>, every: usize, offset: usize) -> (Vec<T>, Vec<T>) {
    let every = every.max(1);
    let mut rest = Vec::new();
    let mut picked = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        if i % every == offset % every {
            picked.push(item);
        } else {
            rest.push(item);
        }
    }
    (rest, picked)
}

/// One scene out of every six goes to validation, starting with the first.
pub fn split_validation(scenes: Vec<Scene>) -> (Vec<Scene>, Vec<Scene>) {
    split_every(scenes, 6, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame_with(questions: &[&str], objects: &[&str]) -> KeyFrame {
        let rule = ClosedAnswerRule::default();
        KeyFrame {
            frame_id: "f".into(),
            camera_images: Camera::ALL.iter().map(|c| (*c, format!("{c}.jpg"))).collect(),
            key_objects: objects
                .iter()
                .map(|s| {
                    let tag: ObjectTag = s.parse().unwrap();
                    KeyObjectInfo {
                        bbox: BBox {
                            x1: tag.x - 5.0,
                            y1: tag.y - 5.0,
                            x2: tag.x + 5.0,
                            y2: tag.y + 5.0,
                        },
                        tag,
                        category: "Vehicle".into(),
                        moving_state: "Moving".into(),
                        description: "Red car.".into(),
                    }
                })
                .collect(),
            qa_list: questions
                .iter()
                .enumerate()
                .map(|(i, q)| QaNode::new("f", i, Stage::Perception, *q, Some("No.".into()), &rule))
                .collect(),
            parse_diagnostics: vec![],
        }
    }

    #[test]
    fn consistent_frame_has_no_diagnostics() {
        let f = frame_with(
            &["Is <c1,CAM_FRONT,714.3,503.6> moving?"],
            &["<c1,CAM_FRONT,714.3,503.6>"],
        );
        assert_eq!(validate_frame(&f), vec![]);
    }

    #[test]
    fn dangling_reference() {
        let f = frame_with(
            &["Is <c9,CAM_FRONT,714.3,503.6> moving?"],
            &["<c1,CAM_FRONT,714.3,503.6>"],
        );
        let d = validate_frame(&f);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "dangling-tag");
    }

    #[test]
    fn out_of_bounds_question_tag() {
        let f = frame_with(
            &["Is <c1,CAM_FRONT,1700.0,503.6> moving?"],
            &["<c1,CAM_FRONT,714.3,503.6>"],
        );
        let d = validate_frame(&f);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "tag-out-of-bounds");
    }

    #[test]
    fn missing_cameras_and_empty_qa() {
        let mut f = frame_with(&[], &[]);
        f.camera_images.remove(&Camera::Back);
        let codes: Vec<_> = validate_frame(&f).into_iter().map(|d| d.code).collect();
        assert_eq!(codes, ["missing-camera", "empty-qa"]);
    }

    #[test]
    fn referenced_tags_follow_question() {
        let f = frame_with(&["<c2,CAM_BACK,1.0,2.0> and <c1,CAM_FRONT,3.0,4.0>?"], &[]);
        let ids: Vec<_> = f.qa_list[0].referenced_tags.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["c2", "c1"]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("No."), "no");
        assert_eq!(normalize_answer("  Going   Ahead!! "), "going ahead");
        let rule = ClosedAnswerRule::default();
        assert_eq!(rule.classify(Some("Yes.")), AnswerForm::Closed);
        assert_eq!(rule.classify(Some("B")), AnswerForm::Closed);
        assert_eq!(rule.classify(Some("Going ahead.")), AnswerForm::Open);
        assert_eq!(rule.classify(None), AnswerForm::Open);
    }

    #[test]
    fn split_twelve() {
        let (train, val) = split_every((0..12).collect(), 6, 0);
        assert_eq!(val, vec![0, 6]);
        assert_eq!(train, vec![1, 2, 3, 4, 5, 7, 8, 9, 10, 11]);
    }

    #[test]
    fn split_one() {
        let (train, val) = split_every(vec![0], 6, 0);
        assert_eq!(val, vec![0]);
        assert!(train.is_empty());
    }

    #[test]
    fn split_offset() {
        let (_, val) = split_every((0..12).collect::<Vec<_>>(), 6, 2);
        assert_eq!(val, vec![2, 8]);
    }
}
