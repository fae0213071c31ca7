//! Run metrics: success/failure accounting, risk from response time, efficiency.

use serde::{Deserialize, Serialize};

use crate::optimizer::KinodynamicLimits;
use crate::scene::{Agent, EgoVehicle, FrenetState};

/// Response times below this count as danger.
pub const DANGER_RESPONSE_TIME: f64 = 1.0;

/// How a single run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOutcome {
    Success,
    /// Collision or planning abort.
    Failure,
    /// Survived, but not in the target lane.
    WrongLane,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub episodes: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len()) - 1;
        Self {
            episodes: sorted.len(),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p95_ms: sorted[idx],
            max_ms: sorted[sorted.len() - 1],
        }
    }
}

/// Aggregate over one or more runs. Latency is wall-clock and kept out of
/// the serialized form so metric files are reproducible.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub runs: usize,
    pub successes: usize,
    pub failures: usize,
    pub wrong_lane: usize,
    pub success_rate: f64,
    pub failure_rate: f64,
    pub risk: f64,
    /// Mean longitudinal speed of the ego, m/s.
    pub efficiency: f64,
    pub collisions: usize,
    /// Planning ticks where every behavior failed.
    pub planning_failures: usize,
    pub lane_changes: usize,
    #[serde(skip)]
    pub latency: LatencyStats,
}

/// Per-run numbers that [`Metrics::aggregate`] combines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub risk: f64,
    pub efficiency: f64,
    pub collisions: usize,
    pub planning_failures: usize,
    pub lane_changes: usize,
    #[serde(skip)]
    pub latencies_ms: Vec<f64>,
}

impl Metrics {
    /// Combines runs; rates are fractions of `runs`, risk and efficiency are
    /// per-run means.
    pub fn aggregate(runs: &[RunSummary]) -> Self {
        let n = runs.len();
        let count = |o: RunOutcome| runs.iter().filter(|r| r.outcome == o).count();
        let mean = |f: &dyn Fn(&RunSummary) -> f64| {
            if n == 0 {
                0.0
            } else {
                runs.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let (successes, failures, wrong_lane) =
            (count(RunOutcome::Success), count(RunOutcome::Failure), count(RunOutcome::WrongLane));
        let latencies: Vec<f64> = runs.iter().flat_map(|r| r.latencies_ms.iter().copied()).collect();
        Self {
            runs: n,
            successes,
            failures,
            wrong_lane,
            success_rate: rate(successes),
            failure_rate: rate(failures),
            risk: mean(&|r| r.risk),
            efficiency: mean(&|r| r.efficiency),
            collisions: runs.iter().map(|r| r.collisions).sum(),
            planning_failures: runs.iter().map(|r| r.planning_failures).sum(),
            lane_changes: runs.iter().map(|r| r.lane_changes).sum(),
            latency: LatencyStats::from_samples(&latencies),
        }
    }

    pub const CSV_HEADER: &'static str = "name,Succ.,Fail,Risk,Effi.";

    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{:.4},{:.4},{:.4},{:.4}",
            self.success_rate, self.failure_rate, self.risk, self.efficiency
        )
    }
}

/// Longest delay before braking that still keeps a positive gap when the
/// front agent brakes now; both brake at the ego's maximum deceleration.
///
/// Infinite without a front agent or with a stationary ego.
pub fn response_time(ego: &EgoVehicle, front: Option<&Agent>, limits: &KinodynamicLimits) -> f64 {
    let Some(front) = front else {
        return f64::INFINITY;
    };
    let gap = bumper_gap(ego, front);
    if gap <= 0.0 {
        return 0.0;
    }
    let v_e = ego.state.v_s.max(0.0);
    if v_e <= 0.0 {
        return f64::INFINITY;
    }
    let v_f = front.state.v_s.max(0.0);
    let decel = -limits.a_s.min;
    ((gap + (v_f * v_f - v_e * v_e) / (2.0 * decel)) / v_e).max(0.0)
}

/// Free distance between the ego's front bumper and the agent's rear bumper.
pub fn bumper_gap(ego: &EgoVehicle, front: &Agent) -> f64 {
    (front.state.s - 0.5 * front.length) - (ego.state.s + 0.5 * ego.length)
}

/// Whether two boxes overlap laterally in d.
pub fn lateral_overlap(d_a: f64, w_a: f64, d_b: f64, w_b: f64) -> bool {
    (d_a - d_b).abs() < 0.5 * (w_a + w_b)
}

/// Closest agent ahead of the ego that overlaps it laterally.
pub fn front_agent<'a>(ego: &EgoVehicle, agents: &'a [Agent]) -> Option<&'a Agent> {
    agents
        .iter()
        .filter(|a| a.state.s > ego.state.s && lateral_overlap(a.state.d, a.width, ego.state.d, ego.width))
        .min_by(|a, b| a.state.s.total_cmp(&b.state.s).then(a.id.cmp(&b.id)))
}

/// One recorded instant of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub t: f64,
    pub ego: FrenetState,
    pub jerk_s: f64,
    pub jerk_d: f64,
    pub agents: Vec<Agent>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub ego_length: f64,
    pub ego_width: f64,
    pub frames: Vec<TraceFrame>,
}

impl Trace {
    pub fn ego_at(&self, frame: &TraceFrame) -> EgoVehicle {
        EgoVehicle { state: frame.ego, length: self.ego_length, width: self.ego_width }
    }

    pub fn mean_speed(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.ego.v_s).sum::<f64>() / self.frames.len() as f64
    }
}

/// Fraction of frames whose response time is below one second.
pub fn compute_risk(trace: &Trace, limits: &KinodynamicLimits) -> f64 {
    if trace.frames.is_empty() {
        return 0.0;
    }
    let danger = trace
        .frames
        .iter()
        .filter(|f| {
            let ego = trace.ego_at(f);
            response_time(&ego, front_agent(&ego, &f.agents), limits) < DANGER_RESPONSE_TIME
        })
        .count();
    danger as f64 / trace.frames.len() as f64
}
