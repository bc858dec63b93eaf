//! DriveLM-nuScenes style dataset files.
//!
//! ```text
//! { scene_id: { "scene_description": str?,
//!               "key_frames": { frame_id: {
//!                   "image_paths": { CAMERA: path },
//!                   "key_object_infos": { "<c1,CAM,x,y>": { "Category", "Status",
//!                                          "Visual_description", "2d_bbox": [x1,y1,x2,y2] } },
//!                   "QA": { "perception": [{"Q","A"}], "prediction": [...],
//!                           "planning": [...], "behavior": [...] } } } } }
//! ```
//!
//! Unknown fields are ignored. See `schema/dataset.schema.json`.

use std::collections::BTreeMap;
use std::io::Read;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use gvqa_core::diag::Diagnostic;
use gvqa_core::model::{BBox, ClosedAnswerRule, KeyFrame, KeyObjectInfo, QaNode, Scene, Stage};
use gvqa_core::tag::{Camera, ObjectTag, TagError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed dataset at byte {offset} (line {line}, column {column}): {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{location}: unknown camera `{camera}`")]
    UnknownCamera { location: String, camera: String },
    #[error("{location}: {message}")]
    Schema { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawScene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_description: Option<String>,
    key_frames: IndexMap<String, RawFrame>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawFrame {
    #[serde(default)]
    image_paths: IndexMap<String, String>,
    #[serde(default)]
    key_object_infos: IndexMap<String, RawKeyObject>,
    #[serde(rename = "QA")]
    qa: RawQa,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawKeyObject {
    #[serde(rename = "Category", default)]
    category: Option<String>,
    #[serde(rename = "Status", default)]
    status: Option<String>,
    #[serde(rename = "Visual_description", default)]
    visual_description: Option<String>,
    #[serde(rename = "2d_bbox")]
    bbox: [f64; 4],
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawQa {
    #[serde(default)]
    perception: Vec<RawQaItem>,
    #[serde(default)]
    prediction: Vec<RawQaItem>,
    #[serde(default)]
    planning: Vec<RawQaItem>,
    #[serde(default)]
    behavior: Vec<RawQaItem>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawQaItem {
    #[serde(rename = "Q")]
    q: String,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<String>,
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut cur_line = 1;
    let mut line_start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if cur_line == line {
            break;
        }
        if b == b'\n' {
            cur_line += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

pub fn parse_dataset(source: impl Read) -> Result<Vec<Scene>, DatasetError> {
    parse_dataset_with(source, &ClosedAnswerRule::default())
}

pub fn parse_dataset_with(mut source: impl Read, rule: &ClosedAnswerRule) -> Result<Vec<Scene>, DatasetError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let raw: IndexMap<String, RawScene> = serde_json::from_slice(&bytes).map_err(|e| DatasetError::Syntax {
        offset: byte_offset(&bytes, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.into_iter()
        .map(|(scene_id, scene)| convert_scene(scene_id, scene, rule))
        .collect()
}

fn convert_scene(scene_id: String, raw: RawScene, rule: &ClosedAnswerRule) -> Result<Scene, DatasetError> {
    if raw.key_frames.is_empty() {
        return Err(DatasetError::Schema {
            location: scene_id,
            message: "scene has no key frames".into(),
        });
    }
    let frames = raw
        .key_frames
        .into_iter()
        .map(|(frame_id, frame)| convert_frame(frame_id, frame, rule))
        .collect::<Result<_, _>>()?;
    Ok(Scene {
        scene_id,
        description: raw.scene_description,
        frames,
    })
}

fn convert_frame(frame_id: String, raw: RawFrame, rule: &ClosedAnswerRule) -> Result<KeyFrame, DatasetError> {
    let mut camera_images = BTreeMap::new();
    for (cam, path) in raw.image_paths {
        let camera: Camera = cam.parse().map_err(|_| DatasetError::UnknownCamera {
            location: format!("{frame_id}/image_paths"),
            camera: cam.clone(),
        })?;
        camera_images.insert(camera, path);
    }

    let mut parse_diagnostics = Vec::new();
    let mut key_objects = Vec::new();
    for (key, obj) in raw.key_object_infos {
        let location = format!("{frame_id}/key_object_infos");
        let tag = match key.parse::<ObjectTag>() {
            Ok(t) => t,
            Err(TagError::UnknownCamera(c)) => return Err(DatasetError::UnknownCamera { location, camera: c.0 }),
            Err(e @ TagError::OutOfBounds { .. }) => {
                parse_diagnostics.push(Diagnostic::warning(
                    "tag-out-of-bounds",
                    location,
                    format!("{key}: {e}"),
                ));
                continue;
            }
            Err(e) => {
                return Err(DatasetError::Schema {
                    location,
                    message: format!("{key}: {e}"),
                })
            }
        };
        let [x1, y1, x2, y2] = obj.bbox;
        key_objects.push(KeyObjectInfo {
            tag,
            bbox: BBox { x1, y1, x2, y2 },
            category: obj.category.unwrap_or_default(),
            moving_state: obj.status.unwrap_or_default(),
            description: obj.visual_description.unwrap_or_default(),
        });
    }

    let RawQa {
        perception,
        prediction,
        planning,
        behavior,
    } = raw.qa;
    let mut qa_list = Vec::new();
    for (stage, items) in Stage::ALL.into_iter().zip([perception, prediction, planning, behavior]) {
        for item in items {
            let index = qa_list.len();
            qa_list.push(QaNode::new(&frame_id, index, stage, item.q, item.a, rule));
        }
    }

    Ok(KeyFrame {
        frame_id,
        camera_images,
        key_objects,
        qa_list,
        parse_diagnostics,
    })
}

/// The fields the harness consumes, in the same layout `parse_dataset` reads.
pub fn dataset_to_json(scenes: &[Scene]) -> serde_json::Value {
    let raw: IndexMap<&str, RawScene> = scenes
        .iter()
        .map(|s| {
            let key_frames = s
                .frames
                .iter()
                .map(|f| {
                    let mut qa = RawQa::default();
                    for n in &f.qa_list {
                        let item = RawQaItem {
                            q: n.question.clone(),
                            a: n.gt_answer.clone(),
                        };
                        match n.stage {
                            Stage::Perception => qa.perception.push(item),
                            Stage::Prediction => qa.prediction.push(item),
                            Stage::Planning => qa.planning.push(item),
                            Stage::Behavior => qa.behavior.push(item),
                        }
                    }
                    let frame = RawFrame {
                        image_paths: f
                            .camera_images
                            .iter()
                            .map(|(c, p)| (c.name().to_string(), p.clone()))
                            .collect(),
                        key_object_infos: f
                            .key_objects
                            .iter()
                            .map(|k| {
                                (
                                    k.tag.serialize(),
                                    RawKeyObject {
                                        category: Some(k.category.clone()),
                                        status: Some(k.moving_state.clone()),
                                        visual_description: Some(k.description.clone()),
                                        bbox: [k.bbox.x1, k.bbox.y1, k.bbox.x2, k.bbox.y2],
                                    },
                                )
                            })
                            .collect(),
                        qa,
                    };
                    (f.frame_id.clone(), frame)
                })
                .collect();
            (
                s.scene_id.as_str(),
                RawScene {
                    scene_description: s.description.clone(),
                    key_frames,
                },
            )
        })
        .collect();
    serde_json::to_value(raw).expect("dataset types always serialize")
}

/// All frames of `scenes` in dataset order.
pub fn frames(scenes: &[Scene]) -> impl Iterator<Item = &KeyFrame> {
    scenes.iter().flat_map(|s| s.frames.iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"s1": {"key_frames": {"f1": {
        "image_paths": {"CAM_FRONT": "a.jpg", "CAM_FRONT_LEFT": "b.jpg", "CAM_FRONT_RIGHT": "c.jpg",
                        "CAM_BACK": "d.jpg", "CAM_BACK_LEFT": "e.jpg", "CAM_BACK_RIGHT": "f.jpg"},
        "key_object_infos": {},
        "QA": {"perception": [{"Q": "What is <c1,CAM_FRONT,714.3,503.6>?", "A": "A car."}]}}}}}"#;

    #[test]
    fn minimal_document() {
        let scenes = parse_dataset(MINIMAL.as_bytes()).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].frames.len(), 1);
        let qa = &scenes[0].frames[0].qa_list;
        assert_eq!(qa.len(), 1);
        assert_eq!(qa[0].node_id, "f1#0");
        assert_eq!(qa[0].referenced_tags[0].serialize(), "<c1,CAM_FRONT,714.3,503.6>");
    }

    #[test]
    fn syntax_error_has_offset() {
        let bad = "{\n  \"s1\": {\"key_frames\": ";
        match parse_dataset(bad.as_bytes()) {
            Err(DatasetError::Syntax { offset, line, .. }) => {
                assert_eq!(line, 2);
                assert!(offset > 3 && offset <= bad.len());
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_camera_is_fatal() {
        let doc = MINIMAL.replace("CAM_BACK_RIGHT\"", "CAM_TOP\"");
        assert!(matches!(
            parse_dataset(doc.as_bytes()),
            Err(DatasetError::UnknownCamera { .. })
        ));
        let doc = MINIMAL.replace(
            "\"key_object_infos\": {}",
            r#""key_object_infos": {"<c1,CAM_TOP,1.0,1.0>": {"2d_bbox": [0,0,2,2]}}"#,
        );
        assert!(matches!(
            parse_dataset(doc.as_bytes()),
            Err(DatasetError::UnknownCamera { .. })
        ));
    }

    #[test]
    fn missing_answer_is_kept() {
        let doc = MINIMAL.replace(", \"A\": \"A car.\"", "");
        let scenes = parse_dataset(doc.as_bytes()).unwrap();
        assert_eq!(scenes[0].frames[0].qa_list[0].gt_answer, None);
    }

    #[test]
    fn out_of_bounds_key_object_is_dropped_with_diagnostic() {
        let doc = MINIMAL.replace(
            "\"key_object_infos\": {}",
            r#""key_object_infos": {"<c1,CAM_FRONT,1700.0,1.0>": {"2d_bbox": [0,0,2,2]}}"#,
        );
        let scenes = parse_dataset(doc.as_bytes()).unwrap();
        let f = &scenes[0].frames[0];
        assert!(f.key_objects.is_empty());
        assert_eq!(f.parse_diagnostics.len(), 1);
    }

    #[test]
    fn empty_scene_is_rejected() {
        assert!(matches!(
            parse_dataset(r#"{"s1": {"key_frames": {}}}"#.as_bytes()),
            Err(DatasetError::Schema { .. })
        ));
    }

    #[test]
    fn byte_offsets() {
        let b = b"ab\ncd\nef";
        assert_eq!(byte_offset(b, 1, 1), 0);
        assert_eq!(byte_offset(b, 2, 2), 4);
        assert_eq!(byte_offset(b, 3, 1), 6);
    }
}
