//! Corridor-constrained trajectory optimization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::{
    curvature, derivative_map, squared_derivative_integral, subdivision_map, Axis, BezierSegment, PiecewiseBezier,
    DEGREE, N_CTRL,
};
use crate::qp::{self, QpProblem, QpStatus, SolverOptions};
use crate::scene::{predict_occupancy, related_agents, FrenetState, LaneLabel, PerceptionParams, Scene};
use crate::voxel_graph::VoxelGraph;
use crate::voxelizer::Voxel;

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl From<(f64, f64)> for Bounds {
    fn from((min, max): (f64, f64)) -> Self {
        Self { min, max }
    }
}

impl Bounds {
    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.min - tol && v <= self.max + tol
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinodynamicLimits {
    pub v_s: Bounds,
    pub v_d: Bounds,
    pub a_s: Bounds,
    pub a_d: Bounds,
    pub j_s: Bounds,
    pub j_d: Bounds,
    pub curvature_max: f64,
}

impl Default for KinodynamicLimits {
    fn default() -> Self {
        Self {
            v_s: (0.0, 20.0).into(),
            v_d: (-2.0, 2.0).into(),
            a_s: (-2.0, 2.0).into(),
            a_d: (-2.0, 2.0).into(),
            j_s: (-2.0, 2.0).into(),
            j_d: (-2.0, 2.0).into(),
            curvature_max: 0.2,
        }
    }
}

impl KinodynamicLimits {
    pub fn validate(&self) -> Result<(), String> {
        for (name, b) in [
            ("v_s", self.v_s),
            ("v_d", self.v_d),
            ("a_s", self.a_s),
            ("a_d", self.a_d),
            ("j_s", self.j_s),
            ("j_d", self.j_d),
        ] {
            if !(b.min < b.max) {
                return Err(format!("{name}: lower bound must be below upper bound"));
            }
        }
        if self.v_s.min < 0.0 {
            return Err("v_s lower bound must be non-negative".into());
        }
        if !(self.curvature_max > 0.0) {
            return Err("curvature_max must be positive".into());
        }
        Ok(())
    }

    fn axis(&self, axis: Axis) -> [Bounds; 3] {
        match axis {
            Axis::S => [self.v_s, self.a_s, self.j_s],
            Axis::D => [self.v_d, self.a_d, self.j_d],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    /// Jerk, end position, end velocity, lateral velocity, longitudinal acceleration.
    pub w: [f64; 5],
    pub w_front: f64,
    pub w_rear: f64,
    pub response_time: f64,
    pub front_rule: FrontRule,
}

/// Sign of the braking term in the target behind a front agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FrontRule {
    /// `s_f + (v0² - v_f²) / 2a - v0 T`: a faster ego aims further ahead.
    Literal,
    /// `s_f - (v0² - v_f²) / 2a - v0 T`: a faster ego keeps its braking
    /// distance, mirroring the rear target.
    #[default]
    Braking,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w: [1.0, 2.0, 1.0, 5.0, 0.5],
            w_front: 1.0,
            w_rear: 1.0,
            response_time: 1.0,
            front_rule: FrontRule::default(),
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.w.iter().any(|w| !(*w >= 0.0)) || self.w_front < 0.0 || self.w_rear < 0.0 {
            return Err("weights must be non-negative".into());
        }
        if !(self.w_front + self.w_rear > 0.0) {
            return Err("front and rear weights must not both be zero".into());
        }
        if !(self.response_time >= 0.0) {
            return Err("response time must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-segment targets for the end position and end velocity terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IdealEndStates {
    pub alpha_s: Vec<f64>,
    pub alpha_d: Vec<f64>,
    pub beta_s: Vec<f64>,
    pub beta_d: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizeError {
    #[error("voxel sequence is empty")]
    EmptySequence,
    #[error("voxel sequence has no lane transition")]
    NoTransition,
    #[error("all {} attempts failed", .reasons.len())]
    Failed { reasons: Vec<FailureReason> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FailureReason {
    Solver(QpStatus),
    Breakdown,
    Verification(Vec<Violation>),
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::Solver(s) => write!(f, "solver status {s:?}"),
            FailureReason::Breakdown => write!(f, "factorization breakdown"),
            FailureReason::Verification(v) => write!(f, "{} sampled violations", v.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    Containment(Axis),
    Velocity(Axis),
    Acceleration(Axis),
    Jerk(Axis),
    Curvature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub kind: ViolationKind,
    pub value: f64,
}

/// Result of the lane-change corridor adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifiedSequence {
    pub voxels: Vec<Voxel>,
    /// Index of the last voxel before the lane transition.
    pub transition: usize,
    /// Set when some adjacent layer offered no intersecting voxel.
    pub empty_intersection: bool,
}

fn transition_index(seq: &[Voxel]) -> Option<usize> {
    seq.windows(2).position(|w| w[0].lane != w[1].lane)
}

fn best_intersection(v: &Voxel, candidates: impl Iterator<Item = Voxel>) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for c in candidates {
        let (lo, hi) = (v.ls.max(c.ls), v.us.min(c.us));
        if hi > lo && best.map_or(true, |(a, b)| hi - lo > b - a) {
            best = Some((lo, hi));
        }
    }
    best
}

/// Adjusts the two voxels around the lane transition: each one's s-range
/// becomes its largest intersection with the voxels of its own lane in the
/// other layer, and both take the hull of their d-ranges.
pub fn modify_sequence_for_lane_change(seq: &[Voxel], graph: &VoxelGraph) -> Result<ModifiedSequence, OptimizeError> {
    if seq.is_empty() {
        return Err(OptimizeError::EmptySequence);
    }
    let i = transition_index(seq).ok_or(OptimizeError::NoTransition)?;
    let mut out = seq.to_vec();
    let (a, b) = (seq[i], seq[i + 1]);
    let layer = |k: usize, lane: LaneLabel| {
        graph
            .layers
            .get(k)
            .into_iter()
            .flatten()
            .map(|n| n.voxel)
            .filter(move |v| v.lane == lane)
    };
    let new_a = best_intersection(&a, layer(i + 1, a.lane));
    let new_b = best_intersection(&b, layer(i, b.lane));
    let empty = new_a.is_none() || new_b.is_none();
    if !empty {
        let (ls, us) = new_a.unwrap();
        out[i].ls = ls;
        out[i].us = us;
        let (ls, us) = new_b.unwrap();
        out[i + 1].ls = ls;
        out[i + 1].us = us;
    }
    let (ld, ud) = (a.ld.min(b.ld), a.ud.max(b.ud));
    for k in [i, i + 1] {
        out[k].ld = ld;
        out[k].ud = ud;
    }
    Ok(ModifiedSequence {
        voxels: out,
        transition: i,
        empty_intersection: empty,
    })
}

/// Time-aligned variant of the lane-change adjustment: voxel `i` keeps the
/// part of its s-range that is also free in the target lane during layer `i`,
/// voxel `i + 1` the part also free in the source lane during layer `i + 1`,
/// and both take the hull of their d-ranges.
pub fn align_transition(seq: &[Voxel], graph: &VoxelGraph) -> Result<ModifiedSequence, OptimizeError> {
    if seq.is_empty() {
        return Err(OptimizeError::EmptySequence);
    }
    let i = transition_index(seq).ok_or(OptimizeError::NoTransition)?;
    let mut out = seq.to_vec();
    let (from, to) = (seq[i].lane, seq[i + 1].lane);
    let mut empty = false;
    for (k, other) in [(i, to), (i + 1, from)] {
        let cands = graph.layers.get(k).into_iter().flatten().map(|n| n.voxel).filter(|v| v.lane == other);
        match best_intersection(&out[k], cands) {
            Some((ls, us)) => {
                out[k].ls = ls;
                out[k].us = us;
            }
            None => empty = true,
        }
    }
    let (ld, ud) = (seq[i].ld.min(seq[i + 1].ld), seq[i].ud.max(seq[i + 1].ud));
    for k in [i, i + 1] {
        out[k].ld = ld;
        out[k].ud = ud;
    }
    Ok(ModifiedSequence {
        voxels: out,
        transition: i,
        empty_intersection: empty,
    })
}

/// Opens the voxels before the transition toward the target lane, walking
/// back from the transition: each takes the part of its s-range that is also
/// free in the target lane during its layer, plus the transition d-range.
/// Stops at the first voxel with no such part, or whose part would lose
/// contact with its successor or the ego's start. Returns the number of
/// voxels widened.
pub fn lead_in(m: &mut ModifiedSequence, graph: &VoxelGraph) -> usize {
    let i = m.transition;
    let to = m.voxels[i + 1].lane;
    let (ld, ud) = (m.voxels[i].ld, m.voxels[i].ud);
    let mut widened = 0;
    for k in (0..i).rev() {
        let cands = graph.layers.get(k).into_iter().flatten().map(|n| n.voxel).filter(|v| v.lane == to);
        let Some((ls, us)) = best_intersection(&m.voxels[k], cands) else {
            break;
        };
        let next = m.voxels[k + 1];
        if us <= next.ls || ls >= next.us || (k == 0 && ls > m.voxels[0].ls) {
            break;
        }
        let v = &mut m.voxels[k];
        (v.ls, v.us, v.ld, v.ud) = (ls, us, v.ld.min(ld), v.ud.max(ud));
        widened += 1;
    }
    widened
}

/// Target end position behind a front agent.
pub fn front_target(s_front: f64, v0: f64, v_front: f64, decel: f64, t_res: f64) -> f64 {
    s_front + (v0 * v0 - v_front * v_front) / (2.0 * decel) - v0 * t_res
}

/// [`front_target`] with the braking distance subtracted.
pub fn braking_front_target(s_front: f64, v0: f64, v_front: f64, decel: f64, t_res: f64) -> f64 {
    s_front - (v0 * v0 - v_front * v_front) / (2.0 * decel) - v0 * t_res
}

/// Target end position ahead of a rear agent.
pub fn rear_target(s_rear: f64, v0: f64, v_rear: f64, decel: f64, t_res: f64, dt: f64) -> f64 {
    s_rear + (v_rear * v_rear - v0 * v0) / (2.0 * decel) + v_rear * (t_res + dt)
}

pub fn blend_targets(front: Option<f64>, rear: Option<f64>, upper: f64, w: &ObjectiveWeights) -> f64 {
    match (front, rear) {
        (None, _) => upper,
        (Some(f), None) => f,
        (Some(f), Some(r)) if r <= f => f,
        (Some(f), Some(r)) => (w.w_front * f + w.w_rear * r) / (w.w_front + w.w_rear),
    }
}

/// Per-segment ideal end states.
pub fn ideal_end_states(
    seq: &[Voxel],
    scene: &Scene,
    weights: &ObjectiveWeights,
    limits: &KinodynamicLimits,
    perception: &PerceptionParams,
) -> IdealEndStates {
    let ego = &scene.ego.state;
    let v0 = ego.v_s.max(0.0);
    let half_ego = 0.5 * scene.ego.length;
    let decel = limits.a_s.max.max(-limits.a_s.min);
    let speed_cap = limits.v_s.max.min(scene.lanes.speed_limit);
    let ego_lane = scene.ego_lane();
    let mut out = IdealEndStates::default();
    for v in seq {
        let agents = related_agents(scene, v.lane, perception).unwrap_or_default();
        let occ = |a: &crate::scene::Agent| {
            let (lo, hi) = predict_occupancy(a, v.lt, v.ut, perception.occupancy_margin);
            (lo - half_ego, hi + half_ego)
        };
        let front = agents
            .iter()
            .filter(|a| occ(a).0 >= v.us - 1e-6)
            .min_by(|a, b| occ(a).0.total_cmp(&occ(b).0).then(a.id.cmp(&b.id)));
        let rear = agents
            .iter()
            .filter(|a| occ(a).1 <= v.ls + 1e-6)
            .max_by(|a, b| occ(a).1.total_cmp(&occ(b).1).then(b.id.cmp(&a.id)));
        let gamma_f = front.map(|a| {
            let (lo, _) = predict_occupancy(a, v.lt, v.lt, perception.occupancy_margin);
            let target = match weights.front_rule {
                FrontRule::Literal => front_target,
                FrontRule::Braking => braking_front_target,
            };
            target(lo - half_ego, v0, a.state.v_s, decel, weights.response_time)
        });
        let gamma_r = rear.map(|a| {
            let (_, hi) = predict_occupancy(a, v.ut, v.ut, perception.occupancy_margin);
            rear_target(hi + half_ego, v0, a.state.v_s, decel, weights.response_time, v.ut - v.lt)
        });
        let alpha = blend_targets(gamma_f, gamma_r, v.us, weights).clamp(v.ls, v.us);
        out.alpha_s.push(alpha);
        // every segment aims for the lane the sequence ends in
        let label = seq.last().map_or(v.lane, |last| last.lane);
        let lane = scene.lanes.resolve(ego_lane, label).unwrap_or(ego_lane);
        out.alpha_d.push(scene.lanes.lane_center(lane));
        out.beta_s.push(front.map_or(speed_cap, |a| a.state.v_s.clamp(limits.v_s.min, speed_cap)));
        out.beta_d.push(0.0);
    }
    out
}

/// Variable index of control point `k` of `axis` in segment `seg`.
pub fn var_index(seg: usize, axis: Axis, k: usize) -> usize {
    seg * 2 * N_CTRL + if axis == Axis::D { N_CTRL } else { 0 } + k
}

/// Row-wise builder for the constraint matrices.
struct RowBuilder {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl RowBuilder {
    fn new(n: usize) -> Self {
        Self { n, rows: Vec::new(), lo: Vec::new(), hi: Vec::new() }
    }

    fn push(&mut self, row: Vec<(usize, f64)>, lo: f64, hi: f64) {
        self.rows.push(row);
        self.lo.push(lo);
        self.hi.push(hi);
    }

    fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Coefficients of the value of `order` at the start (`end = false`) or end of a segment.
fn boundary_row(seg: usize, axis: Axis, order: usize, dt: f64, end: bool, sign: f64) -> Vec<(usize, f64)> {
    let m = derivative_map(order, dt);
    let r = if end { m.nrows() - 1 } else { 0 };
    (0..N_CTRL)
        .filter(|&k| m[(r, k)] != 0.0)
        .map(|k| (var_index(seg, axis, k), sign * m[(r, k)]))
        .collect()
}

/// Most pieces the first segment's velocity hull is split into.
const MAX_VELOCITY_PIECES: usize = 64;

/// Pieces the first segment's velocity curve is split into so that its
/// second control point, fixed by `v0` and `a0`, fits the bounds. Near a
/// velocity limit the plain hull rejects states the curve itself can
/// still handle; each halving moves that point closer to `v0`.
fn velocity_pieces(v0: f64, a0: f64, dt: f64, b: Bounds) -> usize {
    let mut k = 1;
    while k < MAX_VELOCITY_PIECES && !b.contains(v0 + a0 * dt / (DEGREE as f64 - 1.0) / k as f64, 0.0) {
        k *= 2;
    }
    k
}

/// Coordinates the problem is solved in: positions relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub s: f64,
    pub d: f64,
}

/// Builds the QP in ego-relative positions.
pub fn assemble(
    seq: &[Voxel],
    ego: &FrenetState,
    ideals: &IdealEndStates,
    weights: &ObjectiveWeights,
    limits: &KinodynamicLimits,
) -> Result<(QpProblem, Origin), OptimizeError> {
    if seq.is_empty() {
        return Err(OptimizeError::EmptySequence);
    }
    let n_seg = seq.len();
    let n = n_seg * 2 * N_CTRL;
    let origin = Origin { s: ego.s, d: ego.d };
    let shift = |axis: Axis| if axis == Axis::S { origin.s } else { origin.d };

    let mut eq = RowBuilder::new(n);
    let dt0 = seq[0].duration();
    let init = |axis: Axis| -> [f64; 3] {
        let [vb, ab, _] = limits.axis(axis);
        match axis {
            Axis::S => [0.0, vb.clamp(ego.v_s), ab.clamp(ego.a_s)],
            Axis::D => [0.0, vb.clamp(ego.v_d), ab.clamp(ego.a_d)],
        }
    };
    for order in 0..3 {
        for axis in [Axis::S, Axis::D] {
            let target = init(axis)[order];
            eq.push(boundary_row(0, axis, order, dt0, false, 1.0), target, target);
        }
    }
    for i in 0..n_seg.saturating_sub(1) {
        let (dt_a, dt_b) = (seq[i].duration(), seq[i + 1].duration());
        for axis in [Axis::S, Axis::D] {
            for order in 0..3 {
                let mut row = boundary_row(i, axis, order, dt_a, true, 1.0);
                row.extend(boundary_row(i + 1, axis, order, dt_b, false, -1.0));
                eq.push(row, 0.0, 0.0);
            }
        }
    }

    let mut ineq = RowBuilder::new(n);
    for (i, v) in seq.iter().enumerate() {
        let dt = v.duration();
        for axis in [Axis::S, Axis::D] {
            let (lo, hi) = match axis {
                Axis::S => (v.ls, v.us),
                Axis::D => (v.ld, v.ud),
            };
            let bounds = limits.axis(axis);
            for order in 0..4 {
                let mut m = derivative_map(order, dt);
                let (l, u) = if order == 0 {
                    (lo - shift(axis), hi - shift(axis))
                } else {
                    (bounds[order - 1].min, bounds[order - 1].max)
                };
                if i == 0 && order == 1 {
                    let [_, v0, a0] = init(axis);
                    let k = velocity_pieces(v0, a0, dt, bounds[0]);
                    if k > 1 {
                        let pieces: Vec<DMatrix<f64>> = (0..k)
                            .map(|j| subdivision_map(m.nrows(), j as f64 / k as f64, (j + 1) as f64 / k as f64) * &m)
                            .collect();
                        let refs: Vec<&DMatrix<f64>> = pieces.iter().collect();
                        m = DMatrix::from_rows(&refs.iter().flat_map(|p| p.row_iter()).collect::<Vec<_>>());
                    }
                }
                for r in 0..m.nrows() {
                    let row = (0..N_CTRL)
                        .filter(|&k| m[(r, k)] != 0.0)
                        .map(|k| (var_index(i, axis, k), m[(r, k)]))
                        .collect();
                    ineq.push(row, l, u);
                }
            }
        }
    }

    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    let [w0, w1, w2, w3, w4] = weights.w;
    let add_block = |h: &mut DMatrix<f64>, seg: usize, axis: Axis, q: &DMatrix<f64>, w: f64| {
        if w == 0.0 {
            return;
        }
        let base = var_index(seg, axis, 0);
        for a in 0..N_CTRL {
            for b in 0..N_CTRL {
                h[(base + a, base + b)] += 2.0 * w * q[(a, b)];
            }
        }
    };
    for (i, v) in seq.iter().enumerate() {
        let dt = v.duration();
        let jerk = squared_derivative_integral(3, dt);
        add_block(&mut h, i, Axis::S, &jerk, w0);
        add_block(&mut h, i, Axis::D, &jerk, w0);
        add_block(&mut h, i, Axis::D, &squared_derivative_integral(1, dt), w3);
        add_block(&mut h, i, Axis::S, &squared_derivative_integral(2, dt), w4);

        let targets = [
            (Axis::S, 0, ideals.alpha_s[i] - origin.s, w1),
            (Axis::D, 0, ideals.alpha_d[i] - origin.d, w1),
            (Axis::S, 1, ideals.beta_s[i], w2),
            (Axis::D, 1, ideals.beta_d[i], w2),
        ];
        for (axis, order, target, w) in targets {
            if w == 0.0 {
                continue;
            }
            let q = boundary_row(i, axis, order, dt, true, 1.0);
            for &(a, va) in &q {
                g[a] -= 2.0 * w * target * va;
                for &(b, vb) in &q {
                    h[(a, b)] += 2.0 * w * va * vb;
                }
            }
        }
    }

    let problem = QpProblem {
        h,
        g,
        a_eq: eq.matrix(),
        b_eq: DVector::from_vec(eq.lo.clone()),
        a_in: ineq.matrix(),
        lb: DVector::from_vec(ineq.lo.clone()),
        ub: DVector::from_vec(ineq.hi.clone()),
    };
    Ok((problem, origin))
}

/// Converts a solution vector back into an absolute-coordinate trajectory.
pub fn trajectory_from_solution(x: &DVector<f64>, seq: &[Voxel], origin: Origin) -> PiecewiseBezier {
    let segments: Vec<BezierSegment> = seq
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut s = [0.0; N_CTRL];
            let mut d = [0.0; N_CTRL];
            for k in 0..N_CTRL {
                s[k] = x[var_index(i, Axis::S, k)];
                d[k] = x[var_index(i, Axis::D, k)];
            }
            BezierSegment { s, d, lt: v.lt, ut: v.ut }
        })
        .collect();
    PiecewiseBezier::new(segments).translated(origin.s, origin.d)
}

pub const VERIFY_STEP: f64 = 0.02;
pub const VERIFY_TOL: f64 = 1e-4;
pub const MAX_REPORTED: usize = 10;

/// Samples the trajectory and lists the first violations of the corridor and limits.
pub fn verify(traj: &PiecewiseBezier, seq: &[Voxel], limits: &KinodynamicLimits) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let tol = VERIFY_TOL;
    'samples: for t in traj.sample_times(VERIFY_STEP) {
        let idx = traj.segment_index(t).min(seq.len() - 1);
        let vox = &seq[idx];
        let seg = &traj.segments[idx];
        let ev = |axis, order| seg.evaluate(t, axis, order).unwrap_or(f64::NAN);
        let mut push = |kind, value| {
            out.push(Violation { t, kind, value });
            out.len() >= MAX_REPORTED
        };
        let (s, d) = (ev(Axis::S, 0), ev(Axis::D, 0));
        if !(s >= vox.ls - tol && s <= vox.us + tol) && push(ViolationKind::Containment(Axis::S), s) {
            break 'samples;
        }
        if !(d >= vox.ld - tol && d <= vox.ud + tol) && push(ViolationKind::Containment(Axis::D), d) {
            break 'samples;
        }
        for axis in [Axis::S, Axis::D] {
            let [vb, ab, jb] = limits.axis(axis);
            let checks = [
                (ViolationKind::Velocity(axis), ev(axis, 1), vb),
                (ViolationKind::Acceleration(axis), ev(axis, 2), ab),
                (ViolationKind::Jerk(axis), ev(axis, 3), jb),
            ];
            for (kind, value, b) in checks {
                if !b.contains(value, tol) && push(kind, value) {
                    break 'samples;
                }
            }
        }
        if let Some(k) = curvature(ev(Axis::S, 1), ev(Axis::D, 1), ev(Axis::S, 2), ev(Axis::D, 2)) {
            if k > limits.curvature_max + tol && push(ViolationKind::Curvature, k) {
                break 'samples;
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryOptions {
    pub min_segments: usize,
    /// Drop the tail voxel after a failed attempt; when off, only the full
    /// sequence is tried.
    pub shrink: bool,
    pub solver: SolverOptions,
}

impl Default for RetryOptions {
    fn default() -> Self {
        Self {
            min_segments: 2,
            shrink: true,
            solver: SolverOptions::default(),
        }
    }
}

/// One optimization attempt, for debug logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub segments: usize,
    pub voxels: Vec<Voxel>,
    pub status: Option<QpStatus>,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub failure: Option<FailureReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub trajectory: PiecewiseBezier,
    pub sequence: Vec<Voxel>,
    pub attempts: Vec<AttemptRecord>,
}

/// Solves and verifies, dropping the tail voxel after each failure.
pub fn optimize_with_retry(
    seq: &[Voxel],
    ego: &FrenetState,
    ideals: &IdealEndStates,
    weights: &ObjectiveWeights,
    limits: &KinodynamicLimits,
    options: &RetryOptions,
) -> Result<Optimized, (OptimizeError, Vec<AttemptRecord>)> {
    if seq.is_empty() {
        return Err((OptimizeError::EmptySequence, Vec::new()));
    }
    let mut attempts = Vec::new();
    let mut len = seq.len();
    let floor = if options.shrink { options.min_segments.max(1).min(seq.len()) } else { seq.len() };
    while len >= floor {
        let sub = &seq[..len];
        let trimmed = IdealEndStates {
            alpha_s: ideals.alpha_s[..len].to_vec(),
            alpha_d: ideals.alpha_d[..len].to_vec(),
            beta_s: ideals.beta_s[..len].to_vec(),
            beta_d: ideals.beta_d[..len].to_vec(),
        };
        let (problem, origin) = assemble(sub, ego, &trimmed, weights, limits).map_err(|e| (e, Vec::new()))?;
        let mut record = AttemptRecord {
            segments: len,
            voxels: sub.to_vec(),
            status: None,
            iterations: 0,
            objective: None,
            failure: None,
        };
        match qp::solve(&problem, &options.solver) {
            Err(_) => record.failure = Some(FailureReason::Breakdown),
            Ok(sol) => {
                record.status = Some(sol.status);
                record.iterations = sol.iterations;
                record.objective = Some(sol.objective);
                if sol.status != QpStatus::Optimal {
                    record.failure = Some(FailureReason::Solver(sol.status));
                } else {
                    let traj = trajectory_from_solution(&sol.x, sub, origin);
                    match verify(&traj, sub, limits) {
                        Ok(()) => {
                            attempts.push(record);
                            return Ok(Optimized {
                                trajectory: traj,
                                sequence: sub.to_vec(),
                                attempts,
                            });
                        }
                        Err(v) => record.failure = Some(FailureReason::Verification(v)),
                    }
                }
            }
        }
        attempts.push(record);
        if len == 0 {
            break;
        }
        len -= 1;
    }
    let reasons = attempts.iter().filter_map(|a| a.failure.clone()).collect();
    Err((OptimizeError::Failed { reasons }, attempts))
}
