//! Layered voxel graph and minimum-cost corridor search.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::KinodynamicLimits;
use crate::scene::LaneLabel;
use crate::voxelizer::{Voxel, VoxelSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("no {0:?} corridor connects the last layer to the first")]
    Infeasible(Behavior),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    LaneKeep,
    LaneChangeLeft,
    LaneChangeRight,
}

impl Behavior {
    /// Selection order used for tie-breaking.
    pub const ALL: [Behavior; 3] = [
        Behavior::LaneKeep,
        Behavior::LaneChangeLeft,
        Behavior::LaneChangeRight,
    ];

    pub fn target_lane(self) -> LaneLabel {
        match self {
            Behavior::LaneKeep => LaneLabel::Current,
            Behavior::LaneChangeLeft => LaneLabel::Left,
            Behavior::LaneChangeRight => LaneLabel::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    /// Minimum s overlap between a node and its parent.
    pub s_overlap_min: f64,
    /// Minimum d overlap between a node and a same-lane parent.
    pub d_overlap_min: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            s_overlap_min: 5.0,
            d_overlap_min: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParentEdge {
    /// Index of the parent within the previous layer.
    pub parent: usize,
    pub cost: f64,
    pub s_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelNode {
    pub voxel: Voxel,
    pub layer: usize,
    pub parents: Vec<ParentEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGraph {
    pub layers: Vec<Vec<VoxelNode>>,
    pub origin: Option<[f64; 2]>,
}

/// Reference to a node as `(layer, index)`.
pub type NodeRef = (usize, usize);

/// A root-to-leaf corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelPath {
    pub nodes: Vec<NodeRef>,
    pub voxels: Vec<Voxel>,
    /// `edge_costs[k]` is the cost of the edge entering layer `k + 1`.
    pub edge_costs: Vec<f64>,
    pub total_cost: f64,
}

impl VoxelGraph {
    pub fn node(&self, r: NodeRef) -> &VoxelNode {
        &self.layers[r.0][r.1]
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Whether `node` may start a corridor.
    pub fn is_root(&self, node: &VoxelNode) -> bool {
        node.layer == 0
            && match self.origin {
                Some([s, d]) => node.voxel.lane == LaneLabel::Current && node.voxel.contains_sd(s, d, 1e-9),
                None => true,
            }
    }
}

/// A current-lane child needs a current-lane parent; a neighbor-lane child
/// needs a parent in the same lane or in the current lane.
pub fn lane_check(child: &Voxel, parent: &Voxel) -> bool {
    if child.lane == LaneLabel::Current {
        parent.lane == LaneLabel::Current
    } else {
        parent.lane == child.lane || parent.lane == LaneLabel::Current
    }
}

/// Overlap test between consecutive voxels. The d overlap threshold applies
/// to same-lane pairs only: shrunk bands of adjacent lanes never overlap, and
/// the corridor of a lane change is widened laterally after the search.
pub fn intersection_check(child: &Voxel, parent: &Voxel, params: &GraphParams) -> bool {
    overlap_check(child, parent, params.s_overlap_min, params)
}

fn overlap_check(child: &Voxel, parent: &Voxel, s_min: f64, params: &GraphParams) -> bool {
    let s_ok = child.s_overlap(parent) >= s_min;
    let d_ok = child.lane != parent.lane || child.d_overlap(parent) >= params.d_overlap_min;
    s_ok && d_ok
}

/// Normalized restriction cost of an edge, clamped into `[0, 1]`.
pub fn edge_cost(child: &Voxel, parent: &Voxel, limits: &KinodynamicLimits, dt: f64) -> f64 {
    let s_inter = child.s_overlap(parent);
    let spread = dt * dt * (limits.a_s.max - limits.a_s.min);
    if !(spread > 0.0) {
        return 1.0;
    }
    snap_cost((1.0 - 2.0 * s_inter / spread).clamp(0.0, 1.0))
}

/// Share of the unobstructed junction overlap `free` that agents take away.
pub fn restriction_cost(s_inter: f64, free: f64) -> f64 {
    snap_cost((1.0 - s_inter / free).clamp(0.0, 1.0))
}

fn snap_cost(c: f64) -> f64 {
    // roundoff around a saturated overlap must not break cost ties
    if c < 1e-9 {
        0.0
    } else {
        c
    }
}

pub fn build_graph(voxels: &VoxelSet, params: &GraphParams, limits: &KinodynamicLimits) -> VoxelGraph {
    let mut layers: Vec<Vec<VoxelNode>> = Vec::with_capacity(voxels.layers.len());
    for (i, layer) in voxels.layers.iter().enumerate() {
        // cost and threshold refer to the junction at the end of layer i - 1
        let dt = voxels.partition.duration(i.saturating_sub(1));
        // unobstructed overlap at the junction, when the reach windows are known
        let free = match (i.checked_sub(1).and_then(|k| voxels.reach.get(k)), voxels.reach.get(i)) {
            (Some(prev), Some(cur)) if prev.1 > cur.0 => Some(prev.1 - cur.0),
            _ => None,
        };
        let s_min = free.map_or(params.s_overlap_min, |f| params.s_overlap_min.min(0.5 * f));
        let lateral = voxels.lateral.get(i).copied();
        let nodes = layer
            .iter()
            .map(|v| {
                // a neighbor-lane voxel the ego cannot reach sideways by lt is unusable
                let reachable = v.lane == LaneLabel::Current || lateral.is_none_or(|(lo, hi)| v.ud > lo && v.ld < hi);
                let parents = if i == 0 || !reachable {
                    Vec::new()
                } else {
                    layers[i - 1]
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| lane_check(v, &p.voxel) && overlap_check(v, &p.voxel, s_min, params))
                        .map(|(j, p)| ParentEdge {
                            parent: j,
                            cost: match free {
                                Some(f) => restriction_cost(v.s_overlap(&p.voxel), f),
                                None => edge_cost(v, &p.voxel, limits, dt),
                            },
                            s_overlap: v.s_overlap(&p.voxel),
                        })
                        .collect()
                };
                VoxelNode {
                    voxel: *v,
                    layer: i,
                    parents,
                }
            })
            .collect();
        layers.push(nodes);
    }
    VoxelGraph {
        layers,
        origin: voxels.origin,
    }
}

#[derive(Debug, Clone)]
struct Partial {
    /// Nodes from the root, in layer order.
    nodes: Vec<usize>,
    costs: Vec<f64>,
    overlaps: Vec<f64>,
    total: f64,
}

/// Orders candidate paths: lower summed cost, then larger final `us`, then
/// lexicographically larger per-layer s overlap.
pub fn compare_paths(
    a_total: f64,
    a_final_us: f64,
    a_overlaps: &[f64],
    b_total: f64,
    b_final_us: f64,
    b_overlaps: &[f64],
) -> Ordering {
    a_total
        .total_cmp(&b_total)
        .then_with(|| b_final_us.total_cmp(&a_final_us))
        .then_with(|| {
            for (x, y) in a_overlaps.iter().zip(b_overlaps) {
                match y.total_cmp(x) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
}

/// Minimum-cost root-to-leaf corridor ending in the behavior's lane.
///
/// Depth-first from each candidate leaf toward the roots, memoizing the best
/// path from the roots to every visited node.
pub fn search(graph: &VoxelGraph, behavior: Behavior) -> Result<VoxelPath, SearchError> {
    let n = graph.layers.len();
    if n == 0 {
        return Err(SearchError::Infeasible(behavior));
    }
    let target = behavior.target_lane();
    let mut memo: Vec<Vec<Option<Option<Partial>>>> =
        graph.layers.iter().map(|l| vec![None; l.len()]).collect();

    let mut best: Option<Partial> = None;
    for (j, node) in graph.layers[n - 1].iter().enumerate() {
        if node.voxel.lane != target {
            continue;
        }
        let Some(cand) = best_to_root(graph, (n - 1, j), &mut memo) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => {
                let b_us = graph.layers[n - 1][*b.nodes.last().unwrap()].voxel.us;
                compare_paths(cand.total, node.voxel.us, &cand.overlaps, b.total, b_us, &b.overlaps)
                    == Ordering::Less
            }
        };
        if better {
            best = Some(cand);
        }
    }
    let best = best.ok_or(SearchError::Infeasible(behavior))?;
    Ok(VoxelPath {
        nodes: best.nodes.iter().enumerate().map(|(i, &j)| (i, j)).collect(),
        voxels: best
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &j)| graph.layers[i][j].voxel)
            .collect(),
        edge_costs: best.costs,
        total_cost: best.total,
    })
}

fn best_to_root(
    graph: &VoxelGraph,
    at: NodeRef,
    memo: &mut Vec<Vec<Option<Option<Partial>>>>,
) -> Option<Partial> {
    if let Some(done) = &memo[at.0][at.1] {
        return done.clone();
    }
    let node = graph.node(at);
    let result = if at.0 == 0 {
        graph.is_root(node).then(|| Partial {
            nodes: vec![at.1],
            costs: Vec::new(),
            overlaps: Vec::new(),
            total: 0.0,
        })
    } else {
        let mut best: Option<Partial> = None;
        for edge in &node.parents {
            let Some(mut p) = best_to_root(graph, (at.0 - 1, edge.parent), memo) else {
                continue;
            };
            p.nodes.push(at.1);
            p.costs.push(edge.cost);
            p.overlaps.push(edge.s_overlap);
            p.total += edge.cost;
            let better = match &best {
                None => true,
                // same final node, so only cost and overlaps discriminate
                Some(b) => compare_paths(p.total, 0.0, &p.overlaps, b.total, 0.0, &b.overlaps) == Ordering::Less,
            };
            if better {
                best = Some(p);
            }
        }
        best
    };
    memo[at.0][at.1] = Some(result.clone());
    result
}
