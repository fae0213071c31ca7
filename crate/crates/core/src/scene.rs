//! Lanes, reference line, ego and agents, and conversion into lane (Frenet)
//! coordinates.
//!
//! The d axis is measured positive to the left of the reference line. Lane 0
//! is centered on the reference line and lane `k` is centered at
//! `d = k * lane_width`, so lanes are numbered from right to left.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance below which two candidate projections are considered tied.
const PROJECTION_TIE_TOL: f64 = 1e-6;
/// Tied feet closer than this along the line are the same projection seen from adjacent segments.
const FOOT_SEPARATION_TOL: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid lane model: {0}")]
    InvalidLaneModel(String),
    #[error("point projects ambiguously onto the reference line (s = {s_a} and s = {s_b})")]
    AmbiguousProjection { s_a: f64, s_b: f64 },
    #[error("point projects beyond the reference line ends")]
    OutOfRange,
    #[error("lane {0:?} does not exist in this scene")]
    InvalidLane(LaneLabel),
    #[error("duplicate agent id {0}")]
    DuplicateAgent(u64),
    #[error("invalid agent {id}: {reason}")]
    InvalidAgent { id: u64, reason: String },
}

/// Lane relative to the ego vehicle's current lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LaneLabel {
    Left,
    Current,
    Right,
}

impl LaneLabel {
    pub const ALL: [LaneLabel; 3] = [LaneLabel::Left, LaneLabel::Current, LaneLabel::Right];

    /// Lane index offset relative to the ego lane.
    pub fn offset(self) -> isize {
        match self {
            LaneLabel::Left => 1,
            LaneLabel::Current => 0,
            LaneLabel::Right => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneModel {
    pub lane_count: usize,
    pub lane_width: f64,
    /// Centerline of lane 0 as an ordered polyline.
    pub reference_line: Vec<[f64; 2]>,
    pub speed_limit: f64,
}

impl LaneModel {
    pub fn new(
        lane_count: usize,
        lane_width: f64,
        reference_line: Vec<[f64; 2]>,
        speed_limit: f64,
    ) -> Result<Self, SceneError> {
        let model = Self {
            lane_count,
            lane_width,
            reference_line,
            speed_limit,
        };
        model.validate()?;
        Ok(model)
    }

    /// A straight road along the x axis starting at the origin.
    pub fn straight(lane_count: usize, lane_width: f64, length: f64, speed_limit: f64) -> Self {
        Self::new(
            lane_count,
            lane_width,
            vec![[0.0, 0.0], [length, 0.0]],
            speed_limit,
        )
        .expect("straight lane model parameters must be valid")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.lane_count == 0 {
            return Err(SceneError::InvalidLaneModel("lane_count must be >= 1".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(SceneError::InvalidLaneModel("lane_width must be > 0".into()));
        }
        if self.reference_line.len() < 2 {
            return Err(SceneError::InvalidLaneModel(
                "reference line needs at least two points".into(),
            ));
        }
        for w in self.reference_line.windows(2) {
            let len = seg_len(w[0], w[1]);
            if !(len > 0.0) {
                return Err(SceneError::InvalidLaneModel(
                    "reference line arc length must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.reference_line
            .windows(2)
            .map(|w| seg_len(w[0], w[1]))
            .sum()
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }

    /// Lateral extent `(right edge, left edge)` of a lane.
    pub fn lane_band(&self, lane: usize) -> (f64, f64) {
        let c = self.lane_center(lane);
        (c - 0.5 * self.lane_width, c + 0.5 * self.lane_width)
    }

    /// Index of the lane containing lateral offset `d`, clamped to the road.
    pub fn lane_index(&self, d: f64) -> usize {
        let k = (d / self.lane_width).round();
        k.clamp(0.0, (self.lane_count - 1) as f64) as usize
    }

    /// Absolute lane index of `label` as seen from `ego_lane`, if it exists.
    pub fn resolve(&self, ego_lane: usize, label: LaneLabel) -> Option<usize> {
        let k = ego_lane as isize + label.offset();
        (k >= 0 && (k as usize) < self.lane_count).then_some(k as usize)
    }

    /// Cartesian point at Frenet coordinates `(s, d)`.
    pub fn from_frenet(&self, s: f64, d: f64) -> [f64; 2] {
        let mut acc = 0.0;
        let last = self.reference_line.len() - 2;
        for (i, w) in self.reference_line.windows(2).enumerate() {
            let len = seg_len(w[0], w[1]);
            if s <= acc + len || i == last {
                let t = [(w[1][0] - w[0][0]) / len, (w[1][1] - w[0][1]) / len];
                let n = [-t[1], t[0]];
                let u = s - acc;
                return [
                    w[0][0] + t[0] * u + n[0] * d,
                    w[0][1] + t[1] * u + n[1] * d,
                ];
            }
            acc += len;
        }
        unreachable!("reference line has at least one segment")
    }
}

fn seg_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetState {
    pub s: f64,
    pub d: f64,
    pub v_s: f64,
    pub v_d: f64,
    pub a_s: f64,
    pub a_d: f64,
}

impl FrenetState {
    pub fn new(s: f64, d: f64, v_s: f64) -> Self {
        Self {
            s,
            d,
            v_s,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.s, self.d, self.v_s, self.v_d, self.a_s, self.a_d]
            .iter()
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub state: FrenetState,
    pub length: f64,
    pub width: f64,
}

impl Agent {
    pub fn new(id: u64, state: FrenetState, length: f64, width: f64) -> Self {
        Self {
            id,
            state,
            length,
            width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoVehicle {
    pub state: FrenetState,
    pub length: f64,
    pub width: f64,
}

/// Perception-level settings shared by the voxelizer and the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionParams {
    /// Agents farther than this along s are ignored.
    pub sensing_range: f64,
    /// Longitudinal inflation of predicted occupancy beyond half the agent length.
    pub occupancy_margin: f64,
    /// Agents whose center lies within this distance of a lane boundary
    /// belong to both lanes.
    pub straddle_margin: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            sensing_range: 100.0,
            occupancy_margin: 1.0,
            straddle_margin: 0.3,
        }
    }
}

/// Immutable snapshot of the environment at one planning tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub lanes: LaneModel,
    pub ego: EgoVehicle,
    pub agents: Vec<Agent>,
    pub timestamp: f64,
}

impl Scene {
    pub fn new(
        lanes: LaneModel,
        ego: EgoVehicle,
        agents: Vec<Agent>,
        timestamp: f64,
    ) -> Result<Self, SceneError> {
        lanes.validate()?;
        let mut ids: Vec<u64> = agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SceneError::DuplicateAgent(w[0]));
        }
        for a in &agents {
            if !(a.length > 0.0 && a.width > 0.0) {
                return Err(SceneError::InvalidAgent {
                    id: a.id,
                    reason: "length and width must be positive".into(),
                });
            }
            if !a.state.is_finite() {
                return Err(SceneError::InvalidAgent {
                    id: a.id,
                    reason: "non-finite state".into(),
                });
            }
        }
        Ok(Self {
            lanes,
            ego,
            agents,
            timestamp,
        })
    }

    /// Drops agents outside the sensing range.
    pub fn within_range(mut self, range: f64) -> Self {
        let s0 = self.ego.state.s;
        self.agents.retain(|a| (a.state.s - s0).abs() <= range);
        self
    }

    pub fn ego_lane(&self) -> usize {
        self.lanes.lane_index(self.ego.state.d)
    }

    pub fn has_lane(&self, label: LaneLabel) -> bool {
        self.lanes.resolve(self.ego_lane(), label).is_some()
    }

    /// Absolute lane index for `label`.
    pub fn lane_of(&self, label: LaneLabel) -> Result<usize, SceneError> {
        self.lanes
            .resolve(self.ego_lane(), label)
            .ok_or(SceneError::InvalidLane(label))
    }
}

/// Projects a Cartesian state onto the reference line.
pub fn to_frenet(
    position: [f64; 2],
    velocity: [f64; 2],
    acceleration: [f64; 2],
    lanes: &LaneModel,
) -> Result<FrenetState, SceneError> {
    lanes.validate()?;
    let pts = &lanes.reference_line;
    let nseg = pts.len() - 1;

    struct Candidate {
        dist: f64,
        s: f64,
        seg: usize,
        u_raw: f64,
        foot: [f64; 2],
    }

    let mut cands = Vec::with_capacity(nseg);
    let mut acc = 0.0;
    for i in 0..nseg {
        let (a, b) = (pts[i], pts[i + 1]);
        let len = seg_len(a, b);
        let t = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let u_raw = (position[0] - a[0]) * t[0] + (position[1] - a[1]) * t[1];
        let u = u_raw.clamp(0.0, len);
        let foot = [a[0] + t[0] * u, a[1] + t[1] * u];
        cands.push(Candidate {
            dist: seg_len(foot, position),
            s: acc + u,
            seg: i,
            u_raw: u_raw / len,
            foot,
        });
        acc += len;
    }
    // First minimum wins so a foot on a shared vertex resolves to the earlier segment.
    let best = cands
        .iter()
        .fold(&cands[0], |b, c| if c.dist < b.dist { c } else { b });
    if let Some(other) = cands.iter().find(|c| {
        (c.dist - best.dist).abs() <= PROJECTION_TIE_TOL && (c.s - best.s).abs() > FOOT_SEPARATION_TOL
    }) {
        return Err(SceneError::AmbiguousProjection {
            s_a: best.s.min(other.s),
            s_b: best.s.max(other.s),
        });
    }
    if (best.seg == 0 && best.u_raw < -1e-9) || (best.seg == nseg - 1 && best.u_raw > 1.0 + 1e-9)
    {
        return Err(SceneError::OutOfRange);
    }

    let (a, b) = (pts[best.seg], pts[best.seg + 1]);
    let len = seg_len(a, b);
    let t = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let n = [-t[1], t[0]];
    let rel = [position[0] - best.foot[0], position[1] - best.foot[1]];
    let cross = t[0] * rel[1] - t[1] * rel[0];
    let d = best.dist.copysign(if cross == 0.0 { 1.0 } else { cross });

    Ok(FrenetState {
        s: best.s,
        d,
        v_s: velocity[0] * t[0] + velocity[1] * t[1],
        v_d: velocity[0] * n[0] + velocity[1] * n[1],
        a_s: acceleration[0] * t[0] + acceleration[1] * t[1],
        a_d: acceleration[0] * n[0] + acceleration[1] * n[1],
    })
}

/// Longitudinal interval an agent may occupy during `[lt, ut]` under a
/// constant-velocity, constant-lane prediction.
pub fn predict_occupancy(agent: &Agent, lt: f64, ut: f64, margin: f64) -> (f64, f64) {
    let st = &agent.state;
    let half = 0.5 * agent.length + margin;
    let a = st.s + st.v_s * lt;
    let b = st.s + st.v_s * ut;
    (a.min(b) - half, a.max(b) + half)
}

/// Agents relevant to the lane `label`: centered inside its lateral band
/// (widened by the straddle margin) and within sensing range of the ego.
pub fn related_agents<'a>(
    scene: &'a Scene,
    label: LaneLabel,
    params: &PerceptionParams,
) -> Result<Vec<&'a Agent>, SceneError> {
    let lane = scene.lane_of(label)?;
    let (lo, hi) = scene.lanes.lane_band(lane);
    let (lo, hi) = (lo - params.straddle_margin, hi + params.straddle_margin);
    let s0 = scene.ego.state.s;
    Ok(scene
        .agents
        .iter()
        .filter(|a| {
            let d = a.state.d;
            d >= lo && d <= hi && (a.state.s - s0).abs() <= params.sensing_range
        })
        .collect())
}
