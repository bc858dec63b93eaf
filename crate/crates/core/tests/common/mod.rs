#![allow(dead_code)]

use std::collections::BTreeMap;

use gvqa_core::model::{BBox, ClosedAnswerRule, KeyFrame, KeyObjectInfo, QaNode, Stage};
use gvqa_core::tag::{Camera, ObjectTag};
use proptest::prelude::*;

pub const FRAME: &str = "frame";

pub fn tag(i: usize) -> ObjectTag {
    ObjectTag::new(format!("c{}", i + 1), Camera::Front, 100.0 + 50.0 * i as f64, 400.0).unwrap()
}

/// Builds a frame whose node `i` has `stages[i]` and mentions the tags in
/// `refs[i]`. Node 0's answer lists every object in the N0 shape.
pub fn frame(stages: &[Stage], refs: &[Vec<usize>], n_objects: usize) -> KeyFrame {
    let rule = ClosedAnswerRule::default();
    let tags: Vec<ObjectTag> = (0..n_objects).map(tag).collect();
    let qa_list = stages
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(i, (&stage, r))| {
            let mentioned: Vec<String> = r.iter().map(|&k| tags[k].to_string()).collect();
            let question = if i == 0 {
                "What are the important objects in the current scene?".to_string()
            } else if mentioned.is_empty() {
                format!("Question {i} about the road?")
            } else {
                format!("Is {} relevant to question {i}?", mentioned.join(" and "))
            };
            let answer = if i == 0 {
                n0_answer(&tags)
            } else {
                format!("Answer {i}.")
            };
            QaNode::new(FRAME, i, stage, question, Some(answer), &rule)
        })
        .collect();
    KeyFrame {
        frame_id: FRAME.into(),
        camera_images: Camera::ALL
            .iter()
            .map(|&c| (c, format!("{c}.jpg")))
            .collect::<BTreeMap<_, _>>(),
        key_objects: tags
            .iter()
            .map(|t| KeyObjectInfo {
                tag: t.clone(),
                bbox: BBox {
                    x1: t.x - 10.0,
                    y1: t.y - 10.0,
                    x2: t.x + 10.0,
                    y2: t.y + 10.0,
                },
                category: "Vehicle".into(),
                moving_state: "Moving".into(),
                description: "Car.".into(),
            })
            .collect(),
        qa_list,
        parse_diagnostics: Vec::new(),
    }
}

pub fn n0_answer(tags: &[ObjectTag]) -> String {
    let clauses: Vec<String> = (0..tags.len())
        .map(|i| format!("a car number {i} to the front of the ego vehicle"))
        .collect();
    let ids: Vec<String> = tags.iter().map(ToString::to_string).collect();
    format!(
        "There is {}. The IDs of these objects are {}.",
        clauses.join(", "),
        ids.join(", ")
    )
}

pub fn arb_stage() -> impl Strategy<Value = Stage> {
    prop::sample::select(Stage::ALL.to_vec())
}

/// Random frames with 1..=`max_nodes` nodes in stage order and up to four
/// objects.
pub fn arb_frame(max_nodes: usize) -> impl Strategy<Value = KeyFrame> {
    (1..=max_nodes, 1usize..=4).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(arb_stage(), n),
            prop::collection::vec(prop::collection::btree_set(0..k, 0..=k), n),
            Just(k),
        )
            .prop_map(|(mut stages, refs, k)| {
                stages.sort();
                let refs: Vec<Vec<usize>> = refs.into_iter().map(|s| s.into_iter().collect()).collect();
                frame(&stages, &refs, k)
            })
    })
}
