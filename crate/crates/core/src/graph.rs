//! Per-frame logical-dependency graph over QA nodes.
//!
//! An edge `p -> s` means the answer to `p` is context for `s`. All edges are
//! frame-local and point forward in the frame's QA order, so every graph
//! built here is acyclic.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{KeyFrame, QaNode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStrategy {
    /// No context: every question is asked in isolation.
    #[serde(rename = "none")]
    BaselineNone,
    /// Each node sees the answer of the node right before it.
    Cot,
    /// Chain plus the frame's first node for every later node.
    CotN0,
    /// Object-centric graph (see [`SharedObjectRule`]) or a supplied edge list.
    Got,
}

impl ContextStrategy {
    pub const ALL: [ContextStrategy; 4] = [
        ContextStrategy::BaselineNone,
        ContextStrategy::Cot,
        ContextStrategy::CotN0,
        ContextStrategy::Got,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextStrategy::BaselineNone => "none",
            ContextStrategy::Cot => "cot",
            ContextStrategy::CotN0 => "cot_n0",
            ContextStrategy::Got => "got",
        }
    }
}

impl fmt::Display for ContextStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextStrategy {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContextStrategy::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GraphError::UnknownStrategy(s.into()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("frame `{0}` has no QA pairs")]
    EmptyFrame(String),
    #[error("unknown context strategy `{0}`")]
    UnknownStrategy(String),
    #[error("edge {0} -> {1} references a node outside the frame")]
    EdgeOutOfRange(usize, usize),
    #[error("edge {0} -> {1} does not point forward in QA order")]
    BackwardEdge(usize, usize),
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// Produces the edge set used for [`ContextStrategy::Got`].
pub trait EdgeRule {
    /// Edges as `(source index, target index)` into `nodes`.
    fn edges(&self, nodes: &[QaNode]) -> Vec<(usize, usize)>;
}

/// Default graph-of-thought rule: the first node feeds every later node, and
/// a node feeds any later node (in stage order) that mentions one of the
/// same objects.
#[derive(Clone, Copy, Debug, Default)]
pub struct SharedObjectRule;

impl EdgeRule for SharedObjectRule {
    fn edges(&self, nodes: &[QaNode]) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by_key(|&i| (nodes[i].stage, nodes[i].index));
        let mut edges = Vec::new();
        for (a, &i) in order.iter().enumerate() {
            for &j in &order[a + 1..] {
                let shares = nodes[i].referenced_tags.iter().any(|t| nodes[j].references(&t.id));
                if i == 0 || shares {
                    edges.push((i, j));
                }
            }
        }
        edges
    }
}

/// A hand-authored edge list, e.g. loaded from an override file.
#[derive(Clone, Debug, Default)]
pub struct EdgeList(pub Vec<(usize, usize)>);

impl EdgeRule for EdgeList {
    fn edges(&self, _nodes: &[QaNode]) -> Vec<(usize, usize)> {
        self.0.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GvqaGraph {
    node_ids: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
    strategy: ContextStrategy,
}

pub fn build_graph(frame: &KeyFrame, strategy: ContextStrategy) -> Result<GvqaGraph, GraphError> {
    build_graph_with(frame, strategy, &SharedObjectRule)
}

/// Like [`build_graph`], with `got_rule` supplying the edges for
/// [`ContextStrategy::Got`]. Other strategies ignore it.
pub fn build_graph_with(
    frame: &KeyFrame,
    strategy: ContextStrategy,
    got_rule: &dyn EdgeRule,
) -> Result<GvqaGraph, GraphError> {
    let n = frame.qa_list.len();
    if n == 0 {
        return Err(GraphError::EmptyFrame(frame.frame_id.clone()));
    }
    let mut edges = BTreeSet::new();
    match strategy {
        ContextStrategy::BaselineNone => {}
        ContextStrategy::Cot => edges.extend((1..n).map(|i| (i - 1, i))),
        ContextStrategy::CotN0 => {
            edges.extend((1..n).map(|i| (i - 1, i)));
            edges.extend((2..n).map(|j| (0, j)));
        }
        ContextStrategy::Got => {
            for (s, t) in got_rule.edges(&frame.qa_list) {
                if s >= n || t >= n {
                    return Err(GraphError::EdgeOutOfRange(s, t));
                }
                if s >= t {
                    return Err(GraphError::BackwardEdge(s, t));
                }
                edges.insert((s, t));
            }
        }
    }
    Ok(GvqaGraph {
        node_ids: frame.qa_list.iter().map(|q| q.node_id.clone()).collect(),
        edges,
        strategy,
    })
}

impl GvqaGraph {
    /// Builds a graph from arbitrary edges; only endpoints are checked, so the
    /// result may contain cycles (which [`GvqaGraph::execution_order`] reports).
    pub fn from_edges(
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        strategy: ContextStrategy,
    ) -> Result<Self, GraphError> {
        let n = node_ids.len();
        let mut set = BTreeSet::new();
        for (s, t) in edges {
            if s >= n || t >= n {
                return Err(GraphError::EdgeOutOfRange(s, t));
            }
            set.insert((s, t));
        }
        Ok(Self {
            node_ids,
            edges: set,
            strategy,
        })
    }

    pub fn strategy(&self) -> ContextStrategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn index_of(&self, node_id: &str) -> Result<usize, GraphError> {
        self.node_ids
            .iter()
            .position(|n| n == node_id)
            .ok_or_else(|| GraphError::UnknownNode(node_id.into()))
    }

    /// Direct predecessors of `index`, in dataset order.
    pub fn predecessor_indices(&self, index: usize) -> Vec<usize> {
        // BTreeSet order is by source, so this comes out sorted
        self.edges
            .iter()
            .filter(|&&(_, t)| t == index)
            .map(|&(s, _)| s)
            .collect()
    }

    pub fn predecessors(&self, node_id: &str) -> Result<Vec<&str>, GraphError> {
        let idx = self.index_of(node_id)?;
        Ok(self
            .predecessor_indices(idx)
            .into_iter()
            .map(|i| self.node_ids[i].as_str())
            .collect())
    }

    /// Topological order of node indices; among ready nodes the one earliest
    /// in the dataset goes first.
    pub fn execution_order_indices(&self) -> Result<Vec<usize>, GraphError> {
        let n = self.len();
        let mut indegree = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            indegree[t] += 1;
            succ[s].push(t);
        }
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(u)) = ready.pop() {
            order.push(u);
            for &v in &succ[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(Reverse(v));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(GraphError::Cycle(self.cycle_witness(&indegree)))
        }
    }

    pub fn execution_order(&self) -> Result<Vec<&str>, GraphError> {
        Ok(self
            .execution_order_indices()?
            .into_iter()
            .map(|i| self.node_ids[i].as_str())
            .collect())
    }

    /// Groups nodes into waves: every node's predecessors are in earlier
    /// waves, so nodes within one wave can run concurrently.
    pub fn waves(&self) -> Result<Vec<Vec<usize>>, GraphError> {
        let order = self.execution_order_indices()?;
        let mut depth = vec![0usize; self.len()];
        for &u in &order {
            for p in self.predecessor_indices(u) {
                depth[u] = depth[u].max(depth[p] + 1);
            }
        }
        let max = depth.iter().copied().max().unwrap_or(0);
        let mut waves = vec![Vec::new(); if self.is_empty() { 0 } else { max + 1 }];
        for &u in &order {
            waves[depth[u]].push(u);
        }
        for w in &mut waves {
            w.sort_unstable();
        }
        Ok(waves)
    }

    /// Walks predecessor links among nodes left with nonzero indegree until a
    /// node repeats; every such node has a predecessor in the same set.
    fn cycle_witness(&self, indegree: &[usize]) -> Vec<String> {
        let stuck = |i: usize| indegree[i] > 0;
        let Some(start) = (0..self.len()).find(|&i| stuck(i)) else {
            return Vec::new();
        };
        let mut path = vec![start];
        let mut cur = start;
        while let Some(p) = self.predecessor_indices(cur).into_iter().find(|&p| stuck(p)) {
            if let Some(pos) = path.iter().position(|&x| x == p) {
                let mut cycle: Vec<usize> = path[pos..].to_vec();
                cycle.reverse();
                cycle.push(cycle[0]);
                return cycle.into_iter().map(|i| self.node_ids[i].clone()).collect();
            }
            path.push(p);
            cur = p;
        }
        path.into_iter().map(|i| self.node_ids[i].clone()).collect()
    }
}
