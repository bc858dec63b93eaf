//! Detector output rendered as prompt context, and center-distance matching
//! of predicted object tags against ground truth.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::BBox;
use crate::tag::{in_image_bounds, Camera, ObjectTag};

/// Default match radius in pixels.
pub const DEFAULT_MATCH_RADIUS: f64 = 16.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub camera: Camera,
    pub category: String,
    pub color: String,
    pub center: (f64, f64),
    pub bbox: Option<BBox>,
    pub confidence: Option<f64>,
}

impl DetectionRecord {
    pub fn check(&self) -> Result<(), String> {
        let (x, y) = self.center;
        if !in_image_bounds(x, y) {
            return Err(format!("center ({x}, {y}) outside the 1600x900 image"));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("confidence {c} outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn sentence(&self, opening: &str) -> String {
        format!(
            "{opening} a {} {} to the {} of the ego vehicle, and the box center is [{:.1},{:.1}].",
            self.color,
            self.category,
            self.camera.phrase(),
            self.center.0,
            self.center.1
        )
    }
}

/// One "There is a <color> <category> to the <direction> of the ego vehicle,
/// and the box center is [x,y]." sentence per record, newline separated.
pub fn render_detection_context(records: &[DetectionRecord]) -> String {
    render_with_opening(records, "There is")
}

/// Same as [`render_detection_context`] but opens each sentence with the
/// published sample's "These is".
pub fn render_detection_context_verbatim(records: &[DetectionRecord]) -> String {
    render_with_opening(records, "These is")
}

fn render_with_opening(records: &[DetectionRecord], opening: &str) -> String {
    records
        .iter()
        .map(|r| r.sentence(opening))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Closest pairs first, each tag used at most once.
    #[default]
    Greedy,
    /// Maximum number of within-radius pairs.
    Optimal,
}

/// Distance matrix `[pred][gt]`; `None` marks a pair that can never match
/// (different cameras).
pub type DistanceMatrix = Vec<Vec<Option<f64>>>;

pub fn distance_matrix(pred: &[ObjectTag], gt: &[ObjectTag]) -> DistanceMatrix {
    pred.iter()
        .map(|p| {
            gt.iter()
                .map(|g| (p.camera == g.camera).then(|| p.distance(g)))
                .collect()
        })
        .collect()
}

/// Number of one-to-one pairs within `radius`, chosen by `mode`.
///
/// Greedy ties at equal distance are broken by `tie_key`, which callers set
/// from tag contents so the result does not depend on input order.
pub fn match_count_by_distance(
    dist: &DistanceMatrix,
    radius: f64,
    mode: MatchMode,
    tie_key: impl Fn(usize, usize) -> Vec<u64>,
) -> usize {
    let n_pred = dist.len();
    let n_gt = dist.first().map_or(0, Vec::len);
    let mut pairs: Vec<(f64, Vec<u64>, usize, usize)> = Vec::new();
    for (i, row) in dist.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            if let Some(d) = *d {
                if d <= radius {
                    pairs.push((d, tie_key(i, j), i, j));
                }
            }
        }
    }
    match mode {
        MatchMode::Greedy => {
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            let mut pred_used = vec![false; n_pred];
            let mut gt_used = vec![false; n_gt];
            let mut count = 0;
            for (_, _, i, j) in pairs {
                if !pred_used[i] && !gt_used[j] {
                    pred_used[i] = true;
                    gt_used[j] = true;
                    count += 1;
                }
            }
            count
        }
        MatchMode::Optimal => {
            let mut adj = vec![Vec::new(); n_pred];
            for (_, _, i, j) in pairs {
                adj[i].push(j);
            }
            max_bipartite_matching(&adj, n_gt)
        }
    }
}

/// Kuhn's augmenting-path algorithm.
fn max_bipartite_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut count = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if augment(u, adj, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}

fn tag_key(t: &ObjectTag) -> [u64; 3] {
    let id: u64 = t.id[1..].parse().unwrap_or(u64::MAX);
    [t.x.to_bits(), t.y.to_bits(), id]
}

/// Matched pair count between predicted and ground-truth tags.
pub fn match_count(pred: &[ObjectTag], gt: &[ObjectTag], radius: f64, mode: MatchMode) -> usize {
    let dist = distance_matrix(pred, gt);
    match_count_by_distance(&dist, radius, mode, |i, j| {
        let mut k = Vec::with_capacity(6);
        k.extend(tag_key(&gt[j]));
        k.extend(tag_key(&pred[i]));
        k
    })
}

/// Fraction of ground-truth tags matched by a predicted tag of the same
/// camera within `radius` pixels, using greedy closest-first assignment.
pub fn match_predicted_centers(pred: &[ObjectTag], gt: &[ObjectTag], radius: f64) -> f64 {
    match_count(pred, gt, radius, MatchMode::Greedy) as f64 / gt.len().max(1) as f64
}
