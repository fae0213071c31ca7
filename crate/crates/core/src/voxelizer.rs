//! Time segmentation of the planning horizon and generation of free
//! spatio-temporal voxels per lane and segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::KinodynamicLimits;
use crate::scene::{
    predict_occupancy, related_agents, EgoVehicle, FrenetState, LaneLabel, LaneModel,
    PerceptionParams, Scene,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("invalid partition: {0}")]
    InvalidConfig(String),
    #[error("lane band is empty after shrinking by the ego width")]
    EmptyBand,
    #[error("lane {0:?} does not exist")]
    InvalidLane(LaneLabel),
}

/// Monotone non-decreasing segmentation of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePartition {
    durations: Vec<f64>,
    /// `boundaries[i]` is the start of segment `i`; the last entry is the horizon.
    boundaries: Vec<f64>,
}

impl TimePartition {
    pub fn from_durations(durations: Vec<f64>) -> Result<Self, VoxelError> {
        if durations.is_empty() {
            return Err(VoxelError::InvalidConfig("at least one segment".into()));
        }
        if durations.iter().any(|d| !(*d > 0.0)) {
            return Err(VoxelError::InvalidConfig("durations must be positive".into()));
        }
        if durations.windows(2).any(|w| w[1] < w[0]) {
            return Err(VoxelError::InvalidConfig(
                "durations must be non-decreasing".into(),
            ));
        }
        let mut boundaries = Vec::with_capacity(durations.len() + 1);
        let mut t = 0.0;
        boundaries.push(t);
        for d in &durations {
            t += d;
            boundaries.push(t);
        }
        Ok(Self {
            durations,
            boundaries,
        })
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn duration(&self, i: usize) -> f64 {
        self.durations[i]
    }

    /// `(lt, ut)` of segment `i`; `ut` of segment `i` is bitwise `lt` of `i + 1`.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    pub fn horizon(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }
}

/// Geometric schedule `dT_i ~ growth^i` normalized to sum to `horizon`.
pub fn make_partition(horizon: f64, n: usize, growth: f64) -> Result<TimePartition, VoxelError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(VoxelError::InvalidConfig("horizon must be positive".into()));
    }
    if n == 0 {
        return Err(VoxelError::InvalidConfig("n must be >= 1".into()));
    }
    if !(growth >= 1.0) || !growth.is_finite() {
        return Err(VoxelError::InvalidConfig("growth must be >= 1".into()));
    }
    let weights: Vec<f64> = (0..n).map(|i| growth.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    TimePartition::from_durations(weights.iter().map(|w| horizon * w / total).collect())
}

/// Axis-aligned box in (s, d, t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    pub ls: f64,
    pub us: f64,
    pub ld: f64,
    pub ud: f64,
    pub lt: f64,
    pub ut: f64,
    pub lane: LaneLabel,
}

impl Voxel {
    pub fn duration(&self) -> f64 {
        self.ut - self.lt
    }

    pub fn s_overlap(&self, other: &Voxel) -> f64 {
        (self.us.min(other.us) - self.ls.max(other.ls)).max(0.0)
    }

    pub fn d_overlap(&self, other: &Voxel) -> f64 {
        (self.ud.min(other.ud) - self.ld.max(other.ld)).max(0.0)
    }

    pub fn contains_sd(&self, s: f64, d: f64, tol: f64) -> bool {
        s >= self.ls - tol && s <= self.us + tol && d >= self.ld - tol && d <= self.ud + tol
    }
}

/// Voxels of every (segment, lane) cell, stored per segment in the order
/// Left, Current, Right and, within a lane, by increasing `ls`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelSet {
    pub partition: TimePartition,
    pub layers: Vec<Vec<Voxel>>,
    /// Ego `(s, d)` at `t = 0`; when present only layer-0 voxels containing
    /// it can start a corridor.
    pub origin: Option<[f64; 2]>,
    /// Unobstructed reachable s-window of each layer; empty when unknown.
    #[serde(default)]
    pub reach: Vec<(f64, f64)>,
    /// Laterally reachable d-interval at the start of each layer; empty when
    /// unknown.
    #[serde(default)]
    pub lateral: Vec<(f64, f64)>,
}

impl VoxelSet {
    pub fn cell(&self, segment: usize, lane: LaneLabel) -> impl Iterator<Item = &Voxel> {
        self.layers[segment].iter().filter(move |v| v.lane == lane)
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

/// Corridor generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorParams {
    /// Upper bound on voxels per (lane, segment) cell.
    pub max_voxels_per_cell: usize,
    /// Free ranges shorter than ego length plus this are dropped.
    pub min_range_extra: f64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self {
            max_voxels_per_cell: 4,
            min_range_extra: 2.0,
        }
    }
}

/// Longitudinal positions reachable by braking during `lt` (lower bound) and
/// by accelerating during `ut` (upper bound).
pub fn reachable_s_bounds(
    ego: &FrenetState,
    lt: f64,
    ut: f64,
    limits: &KinodynamicLimits,
) -> (f64, f64) {
    let v0 = ego.v_s.max(0.0);
    let decel = -limits.a_s.min;
    let s_min = if decel <= 0.0 {
        ego.s + v0 * lt
    } else if v0 / decel <= lt {
        ego.s + v0 * v0 / (2.0 * decel)
    } else {
        ego.s + v0 * lt - 0.5 * decel * lt * lt
    };

    let accel = limits.a_s.max;
    let vmax = limits.v_s.max;
    let s_max = if v0 >= vmax || accel <= 0.0 {
        ego.s + v0 * ut
    } else {
        let t_acc = (vmax - v0) / accel;
        if ut <= t_acc {
            ego.s + v0 * ut + 0.5 * accel * ut * ut
        } else {
            ego.s + v0 * t_acc + 0.5 * accel * t_acc * t_acc + vmax * (ut - t_acc)
        }
    };
    (s_min, s_max)
}

/// `reachable` minus the union of `occupied`, keeping at most `max_ranges` of
/// the longest pieces that are at least `min_len` long, sorted by start.
pub fn subtract_intervals(
    reachable: (f64, f64),
    occupied: &[(f64, f64)],
    min_len: f64,
    max_ranges: usize,
) -> Vec<(f64, f64)> {
    let (lo, hi) = reachable;
    if !(hi > lo) {
        return Vec::new();
    }
    let mut occ: Vec<(f64, f64)> = occupied
        .iter()
        .copied()
        .filter(|(a, b)| *b > lo && *a < hi)
        .collect();
    occ.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut free = Vec::new();
    let mut cursor = lo;
    for (a, b) in occ {
        if a > cursor {
            free.push((cursor, a.min(hi)));
        }
        cursor = cursor.max(b);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        free.push((cursor, hi));
    }
    free.retain(|(a, b)| b - a >= min_len && b > a);
    if free.len() > max_ranges {
        free.sort_by(|x, y| (y.1 - y.0).total_cmp(&(x.1 - x.0)).then(x.0.total_cmp(&y.0)));
        free.truncate(max_ranges);
        free.sort_by(|x, y| x.0.total_cmp(&y.0));
    }
    free
}

/// Occupied s-intervals of the agents related to `lane` during `[lt, ut]`,
/// inflated by half the ego length so that free ranges bound the ego center.
pub fn lane_occupancy(
    scene: &Scene,
    lane: LaneLabel,
    lt: f64,
    ut: f64,
    perception: &PerceptionParams,
) -> Result<Vec<(f64, f64)>, VoxelError> {
    let agents =
        related_agents(scene, lane, perception).map_err(|_| VoxelError::InvalidLane(lane))?;
    let half_ego = 0.5 * scene.ego.length;
    Ok(agents
        .into_iter()
        .map(|a| {
            let (lo, hi) = predict_occupancy(a, lt, ut, perception.occupancy_margin);
            (lo - half_ego, hi + half_ego)
        })
        .collect())
}

/// Free longitudinal ranges of `lane` in `segment`.
pub fn free_ranges(
    lane: LaneLabel,
    segment: usize,
    scene: &Scene,
    partition: &TimePartition,
    limits: &KinodynamicLimits,
    perception: &PerceptionParams,
    corridor: &CorridorParams,
) -> Result<Vec<(f64, f64)>, VoxelError> {
    let (lt, ut) = partition.bounds(segment);
    let reach = reachable_s_bounds(&scene.ego.state, lt, ut, limits);
    let occ = lane_occupancy(scene, lane, lt, ut, perception)?;
    // a window narrower than the vehicle is still a valid corridor piece
    let min_len = (scene.ego.length + corridor.min_range_extra).min(0.5 * (reach.1 - reach.0));
    Ok(subtract_intervals(reach, &occ, min_len, corridor.max_voxels_per_cell))
}

/// Lateral `(ld, ud)` bounds of voxels in `lane` over `[lt, ut]`.
///
/// Neighbor lanes use the lane band shrunk by half the ego width on each side.
/// The current lane uses the shrunk band, widened to include the ego's present
/// offset, intersected with the laterally reachable envelope.
pub fn lateral_bounds(
    lane: LaneLabel,
    ego: &EgoVehicle,
    window: (f64, f64),
    lanes: &LaneModel,
    limits: &KinodynamicLimits,
) -> Result<(f64, f64), VoxelError> {
    let ego_lane = lanes.lane_index(ego.state.d);
    let k = lanes
        .resolve(ego_lane, lane)
        .ok_or(VoxelError::InvalidLane(lane))?;
    let (lo, hi) = lanes.lane_band(k);
    let half = 0.5 * ego.width;
    let (mut ld, mut ud) = (lo + half, hi - half);
    if !(ud > ld) {
        return Err(VoxelError::EmptyBand);
    }
    if lane == LaneLabel::Current {
        let st = &ego.state;
        let (lt, ut) = window;
        ld = ld.min(st.d);
        ud = ud.max(st.d);
        let a = limits.a_d.max.max(-limits.a_d.min);
        let drift_lo = (st.v_d * lt).min(st.v_d * ut);
        let drift_hi = (st.v_d * lt).max(st.v_d * ut);
        let reach_lo = st.d + drift_lo - 0.5 * a * ut * ut;
        let reach_hi = st.d + drift_hi + 0.5 * a * ut * ut;
        ld = ld.max(reach_lo);
        ud = ud.min(reach_hi);
        if !(ud > ld) {
            return Err(VoxelError::EmptyBand);
        }
    }
    Ok((ld, ud))
}

/// Largest lateral displacement toward `dir` (positive: left) reachable
/// within `t` from the ego state under the jerk, acceleration and velocity
/// limits, by forward integration of the bang-bang profile.
pub fn lateral_reach(state: &FrenetState, dir: f64, t: f64, limits: &KinodynamicLimits) -> f64 {
    const STEP: f64 = 0.005;
    let (jm, am, vm) = if dir >= 0.0 {
        (limits.j_d.max, limits.a_d.max, limits.v_d.max)
    } else {
        (-limits.j_d.min, -limits.a_d.min, -limits.v_d.min)
    };
    let sign = if dir >= 0.0 { 1.0 } else { -1.0 };
    let (mut x, mut v, mut a) = (0.0, sign * state.v_d, sign * state.a_d);
    if !(t > 0.0) || !(jm > 0.0) {
        return 0.0;
    }
    let steps = (t / STEP).ceil() as usize;
    let h = t / steps as f64;
    for _ in 0..steps {
        let braking = a > 0.0 && v + a * a / (2.0 * jm) >= vm;
        let j = if braking {
            -jm
        } else if a < am {
            jm
        } else {
            0.0
        };
        let mut a1 = (a + j * h).min(am);
        if braking {
            a1 = a1.max(0.0);
        }
        x += v * h + (2.0 * a + a1) * h * h / 6.0;
        v = (v + 0.5 * (a + a1) * h).min(vm.max(v));
        a = a1;
    }
    x
}

/// All free voxels of the scene over the partition.
pub fn generate_voxels(
    scene: &Scene,
    partition: &TimePartition,
    limits: &KinodynamicLimits,
    perception: &PerceptionParams,
    corridor: &CorridorParams,
) -> VoxelSet {
    let mut layers = Vec::with_capacity(partition.len());
    for i in 0..partition.len() {
        let window = partition.bounds(i);
        let mut layer = Vec::new();
        for lane in LaneLabel::ALL {
            if !scene.has_lane(lane) {
                continue;
            }
            let Ok((ld, ud)) = lateral_bounds(lane, &scene.ego, window, &scene.lanes, limits)
            else {
                continue;
            };
            let ranges = free_ranges(lane, i, scene, partition, limits, perception, corridor)
                .unwrap_or_default();
            layer.extend(ranges.into_iter().map(|(ls, us)| Voxel {
                ls,
                us,
                ld,
                ud,
                lt: window.0,
                ut: window.1,
                lane,
            }));
        }
        layers.push(layer);
    }
    let reach = (0..partition.len())
        .map(|i| {
            let (lt, ut) = partition.bounds(i);
            reachable_s_bounds(&scene.ego.state, lt, ut, limits)
        })
        .collect();
    let st = &scene.ego.state;
    let lateral = (0..partition.len())
        .map(|i| {
            let lt = partition.bounds(i).0;
            (st.d - lateral_reach(st, -1.0, lt, limits), st.d + lateral_reach(st, 1.0, lt, limits))
        })
        .collect();
    VoxelSet {
        partition: partition.clone(),
        layers,
        origin: Some([st.s, st.d]),
        reach,
        lateral,
    }
}
