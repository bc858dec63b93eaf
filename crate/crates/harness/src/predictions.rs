//! Predictions files: a JSON array of records sorted by frame, then node.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use gvqa_core::model::{KeyFrame, Scene};
use gvqa_core::report::PredictionRecord;

use crate::dataset::frames;

pub fn write_predictions(mut out: impl Write, records: &[PredictionRecord]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, records).map_err(std::io::Error::other)?;
    out.write_all(b"\n")
}

pub fn read_predictions(mut source: impl Read) -> anyhow::Result<Vec<PredictionRecord>> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Error, PartialEq)]
pub enum ResolveError {
    #[error("{} prediction(s) reference nodes not in the dataset: {}", .0.len(), .0.join(", "))]
    UnknownNodes(Vec<String>),
    #[error("duplicate predictions for: {}", .0.join(", "))]
    Duplicates(Vec<String>),
}

/// Looks every record up in `scenes`, taking question, ground truth, stage
/// and answer form from the dataset. The result is in dataset order.
pub fn resolve_predictions(
    records: Vec<PredictionRecord>,
    scenes: &[Scene],
) -> Result<Vec<PredictionRecord>, ResolveError> {
    let mut index: BTreeMap<&str, (usize, &KeyFrame)> = BTreeMap::new();
    for (pos, frame) in frames(scenes).enumerate() {
        index.insert(frame.frame_id.as_str(), (pos, frame));
    }
    let mut unknown = Vec::new();
    let mut seen = BTreeMap::new();
    let mut duplicates = Vec::new();
    let mut out = Vec::new();
    for mut r in records {
        let Some((pos, frame)) = index.get(r.frame_id.as_str()) else {
            unknown.push(r.node_id);
            continue;
        };
        let Some(node) = frame.node(&r.node_id) else {
            unknown.push(r.node_id);
            continue;
        };
        if seen.insert(r.node_id.clone(), ()).is_some() {
            duplicates.push(r.node_id);
            continue;
        }
        r.question = node.question.clone();
        r.gt_answer = node.gt_answer.clone();
        r.stage = node.stage;
        r.answer_form = node.answer_form;
        out.push(((*pos, node.index), r));
    }
    if !unknown.is_empty() {
        return Err(ResolveError::UnknownNodes(unknown));
    }
    if !duplicates.is_empty() {
        return Err(ResolveError::Duplicates(duplicates));
    }
    out.sort_by_key(|(k, _)| *k);
    Ok(out.into_iter().map(|(_, r)| r).collect())
}
