//! One planning episode: voxelize, link, search and optimize per behavior,
//! then pick the cheapest trajectory.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::PiecewiseBezier;
use crate::optimizer::{
    align_transition, ideal_end_states, lead_in, modify_sequence_for_lane_change, optimize_with_retry, AttemptRecord,
    KinodynamicLimits, ObjectiveWeights, OptimizeError, RetryOptions,
};
use crate::scene::{PerceptionParams, Scene};
use crate::voxel_graph::{build_graph, search, Behavior, GraphParams, SearchError, VoxelGraph};
use crate::voxelizer::{generate_voxels, make_partition, CorridorParams, TimePartition, Voxel, VoxelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: f64,
    pub segments: usize,
    pub growth: f64,
    pub limits: KinodynamicLimits,
    pub weights: ObjectiveWeights,
    pub graph: GraphParams,
    pub perception: PerceptionParams,
    pub corridor: CorridorParams,
    pub retry: RetryOptions,
    pub replan_period: f64,
    pub transition: TransitionMode,
}

/// How the two voxels around a lane transition are adjusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TransitionMode {
    /// Intersect each voxel with its own lane in the other layer.
    Literal,
    /// Intersect each voxel with the other lane in its own layer.
    #[default]
    TimeAligned,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 6.0,
            segments: 5,
            growth: 1.2,
            limits: KinodynamicLimits::default(),
            weights: ObjectiveWeights::default(),
            graph: GraphParams::default(),
            perception: PerceptionParams::default(),
            corridor: CorridorParams::default(),
            retry: RetryOptions::default(),
            replan_period: 0.2,
            transition: TransitionMode::default(),
        }
    }
}

impl PlannerConfig {
    pub fn partition(&self) -> Result<TimePartition, VoxelError> {
        make_partition(self.horizon, self.segments, self.growth)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: String| Err(PlannerError::InvalidConfig(m));
        if !(self.replan_period > 0.0) {
            return bad("replan period must be positive".into());
        }
        if let Err(e) = self.partition() {
            return bad(e.to_string());
        }
        self.limits.validate().or_else(bad)?;
        self.weights.validate().or_else(bad)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BehaviorFailure {
    /// The target lane does not exist.
    NoLane,
    NoCorridor,
    /// The lane-change transition has no voxel free in both lanes.
    EmptyIntersection,
    Optimization(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub trajectory: PiecewiseBezier,
    pub sequence: Vec<Voxel>,
    pub edge_costs: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorOutcome {
    pub behavior: Behavior,
    pub result: Result<Candidate, BehaviorFailure>,
    /// Corridor handed to the optimizer, before any tail removal.
    pub corridor: Vec<Voxel>,
    pub attempts: Vec<AttemptRecord>,
    pub search_ms: f64,
    pub optimize_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub voxelize_ms: f64,
    pub graph_ms: f64,
    pub behaviors_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub outcomes: Vec<BehaviorOutcome>,
    pub selected: Option<Behavior>,
    pub trajectory: Option<PiecewiseBezier>,
    pub cost: Option<f64>,
    pub graph: VoxelGraph,
    pub timing: StageTiming,
}

impl EpisodeResult {
    pub fn outcome(&self, b: Behavior) -> &BehaviorOutcome {
        self.outcomes.iter().find(|o| o.behavior == b).expect("every behavior has an outcome")
    }

    pub fn selected_outcome(&self) -> Option<&BehaviorOutcome> {
        self.selected.map(|b| self.outcome(b))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("all behaviors failed: {reasons:?}")]
    AllBehaviorsFailed {
        reasons: Vec<(Behavior, BehaviorFailure)>,
        episode: Box<EpisodeResult>,
    },
}

/// Mean edge cost along a corridor; zero without edges.
pub fn evaluate_trajectory(edge_costs: &[f64]) -> f64 {
    if edge_costs.is_empty() {
        0.0
    } else {
        edge_costs.iter().sum::<f64>() / edge_costs.len() as f64
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn plan_behavior(scene: &Scene, graph: &VoxelGraph, config: &PlannerConfig, behavior: Behavior) -> BehaviorOutcome {
    let mut out = BehaviorOutcome {
        behavior,
        result: Err(BehaviorFailure::NoLane),
        corridor: Vec::new(),
        attempts: Vec::new(),
        search_ms: 0.0,
        optimize_ms: 0.0,
    };
    if !scene.has_lane(behavior.target_lane()) {
        return out;
    }
    let t0 = Instant::now();
    let path = match search(graph, behavior) {
        Ok(p) => p,
        Err(SearchError::Infeasible(_)) => {
            out.search_ms = ms(t0);
            out.result = Err(BehaviorFailure::NoCorridor);
            return out;
        }
    };
    // corridors to try in order; the first one that optimizes wins
    let corridors: Vec<Vec<Voxel>> = if behavior == Behavior::LaneKeep {
        vec![path.voxels.clone()]
    } else {
        let modified = match config.transition {
            TransitionMode::Literal => modify_sequence_for_lane_change(&path.voxels, graph),
            TransitionMode::TimeAligned => align_transition(&path.voxels, graph),
        };
        match modified.ok().filter(|m| !m.empty_intersection) {
            None => Vec::new(),
            Some(m) if config.transition == TransitionMode::TimeAligned => {
                let mut opened = m.clone();
                if lead_in(&mut opened, graph) > 0 {
                    vec![opened.voxels, m.voxels]
                } else {
                    vec![m.voxels]
                }
            }
            Some(m) => vec![m.voxels],
        }
    };
    out.search_ms = ms(t0);
    if corridors.is_empty() {
        out.result = Err(BehaviorFailure::EmptyIntersection);
        return out;
    }

    let t1 = Instant::now();
    for corridor in corridors {
        out.corridor = corridor.clone();
        let ideals = ideal_end_states(&corridor, scene, &config.weights, &config.limits, &config.perception);
        // a lane change shrunk to before its transition is no longer a lane change
        let mut retry = config.retry;
        if let Some(k) =
            corridor.iter().position(|v| v.lane == behavior.target_lane()).filter(|_| behavior != Behavior::LaneKeep)
        {
            retry.min_segments = retry.min_segments.max(k + 1);
        }
        let opt = optimize_with_retry(&corridor, &scene.ego.state, &ideals, &config.weights, &config.limits, &retry);
        match opt {
            Ok(o) => {
                let edges = path.edge_costs[..o.sequence.len() - 1].to_vec();
                out.attempts.extend(o.attempts);
                out.result = Ok(Candidate {
                    cost: evaluate_trajectory(&edges),
                    trajectory: o.trajectory,
                    sequence: o.sequence,
                    edge_costs: edges,
                });
                break;
            }
            Err((e, attempts)) => {
                out.attempts.extend(attempts);
                out.result = Err(BehaviorFailure::Optimization(describe(&e)));
            }
        }
    }
    out.optimize_ms = ms(t1);
    out
}

fn describe(e: &OptimizeError) -> String {
    match e {
        OptimizeError::Failed { reasons } => format!("{} attempts failed, last: {:?}", reasons.len(), reasons.last()),
        other => other.to_string(),
    }
}

/// Runs the whole pipeline on one scene snapshot.
pub fn plan_episode(scene: &Scene, config: &PlannerConfig) -> Result<EpisodeResult, PlannerError> {
    let start = Instant::now();
    config.validate()?;
    let partition = config.partition().map_err(|e| PlannerError::InvalidConfig(e.to_string()))?;

    let t = Instant::now();
    let voxels = generate_voxels(scene, &partition, &config.limits, &config.perception, &config.corridor);
    let voxelize_ms = ms(t);

    let t = Instant::now();
    let graph = build_graph(&voxels, &config.graph, &config.limits);
    let graph_ms = ms(t);

    let t = Instant::now();
    let outcomes: Vec<BehaviorOutcome> =
        Behavior::ALL.par_iter().map(|&b| plan_behavior(scene, &graph, config, b)).collect();
    let behaviors_ms = ms(t);

    let mut best: Option<(Behavior, f64)> = None;
    for o in &outcomes {
        if let Ok(c) = &o.result {
            if best.is_none_or(|(_, cost)| c.cost < cost) {
                best = Some((o.behavior, c.cost));
            }
        }
    }
    let trajectory = best.and_then(|(b, _)| {
        outcomes.iter().find(|o| o.behavior == b).and_then(|o| o.result.as_ref().ok()).map(|c| c.trajectory.clone())
    });
    let episode = EpisodeResult {
        selected: best.map(|b| b.0),
        cost: best.map(|b| b.1),
        trajectory,
        outcomes,
        graph,
        timing: StageTiming { voxelize_ms, graph_ms, behaviors_ms, total_ms: ms(start) },
    };
    if episode.selected.is_none() {
        let reasons = episode
            .outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.behavior, e.clone())))
            .collect();
        return Err(PlannerError::AllBehaviorsFailed { reasons, episode: Box::new(episode) });
    }
    Ok(episode)
}
