//! Detector sidecar files: a JSON list of
//! `{ "frame_id", "camera", "category", "color", "center": [x, y], "bbox"?, "confidence"? }`.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use gvqa_core::detection::DetectionRecord;
use gvqa_core::diag::Diagnostic;
use gvqa_core::model::BBox;
use gvqa_core::tag::Camera;

#[derive(Debug, Deserialize)]
struct RawDetection {
    frame_id: String,
    camera: Camera,
    category: String,
    color: String,
    center: [f64; 2],
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    confidence: Option<f64>,
}

pub type DetectionMap = BTreeMap<String, Vec<DetectionRecord>>;

/// Groups records per frame in file order. Invalid records are dropped and
/// reported.
pub fn load_detections(mut source: impl Read) -> anyhow::Result<(DetectionMap, Vec<Diagnostic>)> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut map = DetectionMap::new();
    let mut diags = Vec::new();
    if text.trim().is_empty() {
        return Ok((map, diags));
    }
    let raw: Vec<RawDetection> = serde_json::from_str(&text)?;
    for (i, r) in raw.into_iter().enumerate() {
        let rec = DetectionRecord {
            camera: r.camera,
            category: r.category,
            color: r.color,
            center: (r.center[0], r.center[1]),
            bbox: r.bbox.map(|[x1, y1, x2, y2]| BBox { x1, y1, x2, y2 }),
            confidence: r.confidence,
        };
        match rec.check() {
            Ok(()) => map.entry(r.frame_id).or_default().push(rec),
            Err(why) => diags.push(Diagnostic::warning(
                "detection-dropped",
                format!("{} (record {i})", r.frame_id),
                why,
            )),
        }
    }
    Ok((map, diags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file() {
        let (m, d) = load_detections("".as_bytes()).unwrap();
        assert!(m.is_empty() && d.is_empty());
        let (m, _) = load_detections("[]".as_bytes()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn one_record_verbatim() {
        let src = r#"[{"frame_id": "f1", "camera": "CAM_FRONT", "category": "car", "color": "red", "center": [714.3, 503.6]}]"#;
        let (m, d) = load_detections(src.as_bytes()).unwrap();
        assert!(d.is_empty());
        let r = &m["f1"][0];
        assert_eq!(
            (r.camera, r.category.as_str(), r.color.as_str(), r.center),
            (Camera::Front, "car", "red", (714.3, 503.6))
        );
    }

    #[test]
    fn out_of_bounds_dropped() {
        let src = r#"[{"frame_id": "f1", "camera": "CAM_FRONT", "category": "car", "color": "red", "center": [1700, 10]},
                      {"frame_id": "f1", "camera": "CAM_BACK", "category": "bus", "color": "blue", "center": [10, 10], "confidence": 0.9}]"#;
        let (m, d) = load_detections(src.as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(m["f1"].len(), 1);
        assert_eq!(m["f1"][0].category, "bus");
    }
}
