use std::path::{Path, PathBuf};

use gvqa_core::model::{validate_frame, AnswerForm, Stage};
use gvqa_harness::dataset::{dataset_to_json, frames, parse_dataset, DatasetError};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

#[test]
fn mini_fixture_shape() {
    let scenes = parse_dataset(read("mini.json").as_bytes()).unwrap();
    assert!(scenes.len() >= 2);
    let all: Vec<_> = frames(&scenes).collect();
    assert!(all.len() >= 4);
    let nodes: Vec<_> = all.iter().flat_map(|f| &f.qa_list).collect();
    assert!(nodes.len() >= 20);
    for s in Stage::ALL {
        assert!(nodes.iter().any(|n| n.stage == s), "{s}");
    }
    assert!(nodes.iter().any(|n| n.answer_form == AnswerForm::Closed));
    for f in &all {
        assert!(validate_frame(f).is_empty(), "{}: {:?}", f.frame_id, validate_frame(f));
    }
}

#[test]
fn reserialized_content_is_identical() {
    let text = read("mini.json");
    let scenes = parse_dataset(text.as_bytes()).unwrap();
    let original: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(dataset_to_json(&scenes), original);
}

#[test]
fn dangling_reference_is_one_warning() {
    let scenes = parse_dataset(read("dangling.json").as_bytes()).unwrap();
    let diags: Vec<_> = frames(&scenes).flat_map(validate_frame).collect();
    assert_eq!(diags.len(), 1, "{diags:?}");
    assert_eq!(diags[0].code, "dangling-tag");
}

#[test]
fn truncated_file_reports_position() {
    match parse_dataset(read("truncated.json").as_bytes()) {
        Err(DatasetError::Syntax { offset, line, .. }) => {
            assert!(offset > 0 && line > 1);
        }
        other => panic!("expected a syntax error, got {other:?}"),
    }
}
