//! Open-loop replays: logged traffic plays back verbatim while one agent is
//! replaced by the planner.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::PiecewiseBezier;
use crate::harness::metrics::{compute_risk, lateral_overlap, Metrics, RunOutcome, RunSummary, Trace, TraceFrame};
use crate::harness::sim::{boxes_overlap, idm_accel, integrate, sample_plan, EndReason, IdmParams, TickRecord, GRACE_TICKS};
use crate::planner::{plan_episode, EpisodeResult, PlannerConfig, PlannerError};
use crate::scene::{Agent, EgoVehicle, FrenetState, LaneModel, Scene};
use crate::voxel_graph::Behavior;

pub const CSV_HEADER: &str = "frame,time,id,s,d,v_s,v_d,length,width";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay file: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid replay log: {0}")]
    Invalid(String),
    #[error("agent {0} is not in the first frame of the log")]
    MissingEgo(u64),
    #[error("log covers {available:.2} s of the {needed:.2} s horizon")]
    TruncatedLog { needed: f64, available: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Row {
    frame: u64,
    time: f64,
    id: u64,
    s: f64,
    d: f64,
    v_s: f64,
    v_d: f64,
    length: f64,
    width: f64,
}

/// Agent states sampled at a fixed period; frame `k` is at `k * frame_period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayLog {
    pub frame_period: f64,
    pub frames: Vec<Vec<Agent>>,
}

impl ReplayLog {
    /// Checks the period, per-frame id uniqueness and that every agent's
    /// trace is one contiguous run of frames.
    pub fn new(frame_period: f64, frames: Vec<Vec<Agent>>) -> Result<Self, ReplayError> {
        if !(frame_period > 0.0) {
            return Err(ReplayError::Invalid("frame period must be positive".into()));
        }
        if frames.is_empty() {
            return Err(ReplayError::Invalid("log has no frames".into()));
        }
        let mut last_seen: std::collections::HashMap<u64, usize> = Default::default();
        let mut closed = std::collections::HashSet::new();
        for (k, frame) in frames.iter().enumerate() {
            let mut ids: Vec<u64> = frame.iter().map(|a| a.id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(ReplayError::Invalid(format!("frame {k} repeats an agent id")));
            }
            for a in frame {
                if closed.contains(&a.id) {
                    return Err(ReplayError::Invalid(format!("agent {} reappears at frame {k}", a.id)));
                }
                if !a.state.is_finite() || !(a.length > 0.0 && a.width > 0.0) {
                    return Err(ReplayError::Invalid(format!("agent {} has a bad state at frame {k}", a.id)));
                }
                last_seen.insert(a.id, k);
            }
            for (&id, &seen) in &last_seen {
                if seen + 1 == k && !frame.iter().any(|a| a.id == id) {
                    closed.insert(id);
                }
            }
        }
        Ok(Self { frame_period, frames })
    }

    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 * self.frame_period
    }

    /// First and last frame containing `id`.
    pub fn span(&self, id: u64) -> Option<(usize, usize)> {
        let has = |f: &Vec<Agent>| f.iter().any(|a| a.id == id);
        let first = self.frames.iter().position(has)?;
        let last = self.frames.iter().rposition(has)?;
        Some((first, last))
    }

    /// Agents at time `t`, linearly interpolated between the surrounding
    /// frames; agents missing from the later frame keep their earlier state.
    pub fn agents_at(&self, t: f64) -> Vec<Agent> {
        let x = (t / self.frame_period).clamp(0.0, (self.frames.len() - 1) as f64);
        let k = (x.floor() as usize).min(self.frames.len() - 1);
        let u = x - k as f64;
        let Some(next) = self.frames.get(k + 1).filter(|_| u > 0.0) else {
            return self.frames[k].clone();
        };
        self.frames[k]
            .iter()
            .map(|a| match next.iter().find(|b| b.id == a.id) {
                Some(b) => {
                    let lerp = |p: f64, q: f64| p + u * (q - p);
                    let mut out = a.clone();
                    out.state.s = lerp(a.state.s, b.state.s);
                    out.state.d = lerp(a.state.d, b.state.d);
                    out.state.v_s = lerp(a.state.v_s, b.state.v_s);
                    out.state.v_d = lerp(a.state.v_d, b.state.v_d);
                    out
                }
                None => a.clone(),
            })
            .collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ReplayError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != CSV_HEADER {
            return Err(ReplayError::Invalid(format!("header must be `{CSV_HEADER}`")));
        }
        let rows: Vec<Row> = rdr.deserialize().collect::<Result<_, _>>()?;
        Self::from_rows(&rows)
    }

    fn from_rows(rows: &[Row]) -> Result<Self, ReplayError> {
        let Some(first) = rows.first() else {
            return Err(ReplayError::Invalid("log has no rows".into()));
        };
        let mut frames: Vec<Vec<Agent>> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for r in rows {
            let Some(k) = r.frame.checked_sub(first.frame).map(|k| k as usize) else {
                return Err(ReplayError::Invalid(format!("frame {} is out of order", r.frame)));
            };
            if k + 1 < frames.len() || k > frames.len() {
                return Err(ReplayError::Invalid(format!("frame {} is out of order", r.frame)));
            }
            if k == frames.len() {
                frames.push(Vec::new());
                times.push(r.time);
            } else if r.time != times[k] {
                return Err(ReplayError::Invalid(format!("frame {} has two timestamps", r.frame)));
            }
            let mut st = FrenetState::new(r.s, r.d, r.v_s);
            st.v_d = r.v_d;
            frames[k].push(Agent::new(r.id, st, r.length, r.width));
        }
        let period = if times.len() > 1 { times[1] - times[0] } else { 0.1 };
        for (k, t) in times.iter().enumerate() {
            if (t - times[0] - k as f64 * period).abs() > 1e-6 {
                return Err(ReplayError::Invalid(format!("frame {} is off the fixed period", first.frame + k as u64)));
            }
        }
        Self::new(period, frames)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ReplayError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        for (k, frame) in self.frames.iter().enumerate() {
            for a in frame {
                w.serialize(Row {
                    frame: k as u64,
                    time: k as f64 * self.frame_period,
                    id: a.id,
                    s: a.state.s,
                    d: a.state.d,
                    v_s: a.state.v_s,
                    v_d: a.state.v_d,
                    length: a.length,
                    width: a.width,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReplayError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Which run family a synthetic episode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayKind {
    LaneKeep,
    LaneChange,
}

/// Traffic densities in vehicles per kilometre per lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Density {
    Sparse,
    Moderate,
    Dense,
}

impl Density {
    pub fn per_km(self) -> f64 {
        match self {
            Density::Sparse => 10.0,
            Density::Moderate => 20.0,
            Density::Dense => 35.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub lanes: usize,
    pub lane_width: f64,
    /// Vehicles per kilometre per lane.
    pub density: f64,
    /// Desired speed range of the agents, m/s.
    pub speed: (f64, f64),
    /// Road stretch populated at t = 0, m.
    pub span: f64,
    pub duration: f64,
    /// Simulated time before the first frame, s.
    pub warmup: f64,
    pub frame_period: f64,
    /// Length of the logged driver's lane change, s.
    pub lane_change_time: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            lanes: 4,
            lane_width: 4.0,
            density: Density::Moderate.per_km(),
            speed: (10.0, 16.0),
            span: 400.0,
            duration: 12.0,
            warmup: 20.0,
            frame_period: 0.1,
            lane_change_time: 4.0,
        }
    }
}

impl SyntheticParams {
    pub fn with_density(density: Density) -> Self {
        Self { density: density.per_km(), ..Self::default() }
    }

    pub fn lane_model(&self, speed_limit: f64) -> LaneModel {
        LaneModel::straight(self.lanes, self.lane_width, self.span + 2000.0, speed_limit)
    }
}

/// A generated log with the agent the planner replaces and its goal lane.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEpisode {
    pub log: ReplayLog,
    pub ego_id: u64,
    pub target_lane: usize,
}

fn smoothstep5(x: f64) -> (f64, f64) {
    let x = x.clamp(0.0, 1.0);
    (x * x * x * (10.0 - 15.0 * x + 6.0 * x * x), 30.0 * x * x * (1.0 - x) * (1.0 - x))
}

fn idm_step(agents: &mut [(Agent, IdmParams)], dt: f64) {
    let accels: Vec<f64> = agents
        .iter()
        .map(|(a, idm)| {
            let leader = agents
                .iter()
                .map(|(o, _)| o)
                .filter(|o| o.id != a.id && o.state.s > a.state.s && lateral_overlap(o.state.d, o.width, a.state.d, a.width))
                .min_by(|x, y| x.state.s.total_cmp(&y.state.s))
                .map(|o| (o.state.s - 0.5 * o.length - a.state.s - 0.5 * a.length, o.state.v_s));
            idm_accel(a.state.v_s, leader, idm)
        })
        .collect();
    for ((a, idm), acc) in agents.iter_mut().zip(accels) {
        let (s, v) = integrate(a.state.s, a.state.v_s, acc, dt);
        a.state.s = s;
        a.state.v_s = if a.state.v_s <= idm.desired_speed { v.min(idm.desired_speed) } else { v };
    }
}

/// Poisson-spaced IDM traffic on straight lanes. The logged driver sits in
/// an inner lane; for lane-change episodes it moves to a neighbor lane
/// along a quintic profile, with a gap cleared around it in that lane.
/// Traffic runs for `warmup` seconds before the first frame so followers
/// have settled behind their leaders.
pub fn synthetic_episode(params: &SyntheticParams, kind: ReplayKind, seed: u64) -> SyntheticEpisode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (length, width) = (5.0, 2.0);
    let mean_gap = (1000.0 / params.density - length - 8.0).max(1.0);
    let gaps = Exp::new(1.0 / mean_gap).expect("positive rate");

    let mut agents: Vec<(Agent, IdmParams)> = Vec::new();
    for lane in 0..params.lanes {
        let d = lane as f64 * params.lane_width;
        let mut s = rng.random_range(0.0..mean_gap.min(30.0));
        while s < params.span {
            let v = rng.random_range(params.speed.0..params.speed.1);
            let id = agents.len() as u64;
            agents.push((Agent::new(id, FrenetState::new(s, d, v), length, width), IdmParams { desired_speed: v, ..IdmParams::default() }));
            s += length + 8.0 + gaps.sample(&mut rng);
        }
    }

    for _ in 0..(params.warmup / params.frame_period).round() as usize {
        idm_step(&mut agents, params.frame_period);
    }

    let inner = if params.lanes > 2 { 1..params.lanes - 1 } else { 0..params.lanes };
    let ego_lane = rng.random_range(inner);
    let ego_d = ego_lane as f64 * params.lane_width;
    let (lo, hi) = agents.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, _)| (lo.min(a.state.s), hi.max(a.state.s)));
    let anchor = lo + 0.4 * (hi - lo);
    let ego_id = agents
        .iter()
        .filter(|(a, _)| (a.state.d - ego_d).abs() < 1e-9)
        .min_by(|(a, _), (b, _)| (a.state.s - anchor).abs().total_cmp(&(b.state.s - anchor).abs()).then(a.id.cmp(&b.id)))
        .map(|(a, _)| a.id)
        .unwrap_or_else(|| {
            let id = agents.len() as u64;
            let v = rng.random_range(params.speed.0..params.speed.1);
            agents.push((Agent::new(id, FrenetState::new(anchor, ego_d, v), length, width), IdmParams { desired_speed: v, ..IdmParams::default() }));
            id
        });

    let mut target_lane = ego_lane;
    let mut maneuver = None;
    if kind == ReplayKind::LaneChange {
        let mut sides = Vec::new();
        if ego_lane + 1 < params.lanes {
            sides.push(ego_lane + 1);
        }
        if ego_lane > 0 {
            sides.push(ego_lane - 1);
        }
        target_lane = sides[rng.random_range(0..sides.len())];
        let start = rng.random_range(1.0..4.0);
        let ego_s = agents.iter().find(|(a, _)| a.id == ego_id).map(|(a, _)| a.state.s).unwrap_or(anchor);
        let target_d = target_lane as f64 * params.lane_width;
        agents.retain(|(a, _)| !((a.state.d - target_d).abs() < 1e-9 && (a.state.s - ego_s).abs() < 20.0));
        maneuver = Some((start, ego_d, target_d));
    }

    let steps = (params.duration / params.frame_period).round() as usize;
    let mut frames = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * params.frame_period;
        if let Some((start, d0, d1)) = maneuver {
            let (p, dp) = smoothstep5((t - start) / params.lane_change_time);
            if let Some((a, _)) = agents.iter_mut().find(|(a, _)| a.id == ego_id) {
                a.state.d = d0 + (d1 - d0) * p;
                a.state.v_d = (d1 - d0) * dp / params.lane_change_time;
            }
        }
        frames.push(agents.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>());
        idm_step(&mut agents, params.frame_period);
    }
    SyntheticEpisode {
        log: ReplayLog::new(params.frame_period, frames).expect("generated log is valid"),
        ego_id,
        target_lane,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenLoopConfig {
    /// Planning duration, s.
    pub horizon: f64,
    /// Step between collision checks, s.
    pub dt: f64,
    pub speed_limit: f64,
    /// Prefer the behavior that heads for the target lane over the
    /// cheapest one.
    pub goal_directed: bool,
}

impl Default for OpenLoopConfig {
    fn default() -> Self {
        Self { horizon: 10.0, dt: 0.05, speed_limit: 20.0, goal_directed: true }
    }
}

#[derive(Debug, Clone)]
pub struct OpenLoopResult {
    pub summary: RunSummary,
    pub end: EndReason,
    pub final_lane: usize,
    pub trace: Trace,
    pub ticks: Vec<TickRecord>,
}

/// Behavior that moves from `lane` toward `goal`.
pub fn behavior_toward(lane: usize, goal: usize) -> Behavior {
    match goal.cmp(&lane) {
        std::cmp::Ordering::Equal => Behavior::LaneKeep,
        std::cmp::Ordering::Greater => Behavior::LaneChangeLeft,
        std::cmp::Ordering::Less => Behavior::LaneChangeRight,
    }
}

/// Goal-directed pick: the behavior toward the goal if it succeeded, else
/// lane keeping, else the episode's own selection.
pub fn select_toward(ep: &EpisodeResult, toward: Behavior) -> Option<(Behavior, PiecewiseBezier)> {
    let ok = |b: Behavior| ep.outcome(b).result.as_ref().ok().map(|c| (b, c.trajectory.clone()));
    ok(toward)
        .or_else(|| ok(Behavior::LaneKeep))
        .or_else(|| ep.selected.zip(ep.trajectory.clone()))
}

/// Replaces `ego_id` with the planner for `cfg.horizon` seconds while every
/// other agent follows the log.
pub fn run_open_loop(
    log: &ReplayLog,
    ego_id: u64,
    target_lane: usize,
    lanes: &LaneModel,
    cfg: &OpenLoopConfig,
    planner: &PlannerConfig,
) -> Result<OpenLoopResult, ReplayError> {
    let ego_agent = log.frames[0].iter().find(|a| a.id == ego_id).ok_or(ReplayError::MissingEgo(ego_id))?;
    let (_, last) = log.span(ego_id).expect("ego is in frame 0");
    let available = last as f64 * log.frame_period;
    if available + 1e-9 < cfg.horizon {
        return Err(ReplayError::TruncatedLog { needed: cfg.horizon, available });
    }
    let mut ego = EgoVehicle { state: ego_agent.state, length: ego_agent.length, width: ego_agent.width };
    ego.state.a_s = 0.0;
    ego.state.a_d = 0.0;
    let others = |t: f64| -> Vec<Agent> { log.agents_at(t).into_iter().filter(|a| a.id != ego_id).collect() };

    let range = planner.perception.sensing_range;
    let steps_per_tick = ((planner.replan_period / cfg.dt).round() as usize).max(1);
    let ticks_total = (cfg.horizon / (steps_per_tick as f64 * cfg.dt)).round() as usize;
    let mut trace = Trace { ego_length: ego.length, ego_width: ego.width, frames: Vec::new() };
    let mut ticks = Vec::new();
    let mut plan: Option<(f64, PiecewiseBezier)> = None;
    let (mut failed, mut consecutive) = (0, 0);
    let mut end = EndReason::Completed;
    let mut clock = 0.0;
    let mut step = 0usize;

    let near = |ego: &EgoVehicle, agents: Vec<Agent>| -> Vec<Agent> {
        agents.into_iter().filter(|a| (a.state.s - ego.state.s).abs() <= range).collect()
    };

    'outer: for _ in 0..ticks_total {
        let scene = Scene::new(lanes.clone(), ego, near(&ego, others(clock)), clock).expect("replay scene is valid");
        let toward = behavior_toward(lanes.lane_index(ego.state.d), target_lane);
        match plan_episode(&scene, planner) {
            Ok(ep) => {
                consecutive = 0;
                let (b, traj) = if cfg.goal_directed {
                    select_toward(&ep, toward).expect("successful episode has a trajectory")
                } else {
                    (ep.selected.expect("selected"), ep.trajectory.clone().expect("trajectory"))
                };
                ticks.push(TickRecord::from_episode(clock, &ep, Some(b)));
                plan = Some((clock, traj));
            }
            Err(PlannerError::AllBehaviorsFailed { episode, .. }) => {
                ticks.push(TickRecord::from_episode(clock, &episode, None));
                failed += 1;
                consecutive += 1;
                if consecutive > GRACE_TICKS || plan.is_none() {
                    end = EndReason::PlanningAborted;
                    break;
                }
            }
            Err(e @ PlannerError::InvalidConfig(_)) => panic!("{e}"),
        }
        let (start, traj) = plan.as_ref().expect("a plan is in force");
        for _ in 0..steps_per_tick {
            let (state, jerk) = sample_plan(traj, clock - start);
            ego.state = state;
            let agents = others(clock);
            trace.frames.push(TraceFrame {
                t: clock,
                ego: ego.state,
                jerk_s: jerk[0],
                jerk_d: jerk[1],
                agents: near(&ego, agents.clone()),
            });
            if let Some(a) = agents.iter().find(|a| boxes_overlap(&ego, a)) {
                end = EndReason::Collision { agent: a.id };
                break 'outer;
            }
            step += 1;
            clock = step as f64 * cfg.dt;
        }
    }
    if end == EndReason::Completed {
        if let Some((start, traj)) = &plan {
            ego.state = sample_plan(traj, clock - start).0;
        }
        if let Some(a) = others(clock).iter().find(|a| boxes_overlap(&ego, a)) {
            end = EndReason::Collision { agent: a.id };
        }
    }

    let final_lane = lanes.lane_index(ego.state.d);
    let outcome = match end {
        EndReason::Completed if final_lane == target_lane => RunOutcome::Success,
        EndReason::Completed => RunOutcome::WrongLane,
        _ => RunOutcome::Failure,
    };
    let summary = RunSummary {
        outcome,
        risk: compute_risk(&trace, &planner.limits),
        efficiency: trace.mean_speed(),
        collisions: usize::from(matches!(end, EndReason::Collision { .. })),
        planning_failures: failed,
        lane_changes: crate::harness::sim::count_lane_changes(&trace, lanes),
        latencies_ms: ticks.iter().map(|t| t.latency_ms).collect(),
    };
    Ok(OpenLoopResult { summary, end, final_lane, trace, ticks })
}

/// Runs one synthetic episode per seed in parallel; results are in seed order.
pub fn run_batch(
    params: &SyntheticParams,
    kind: ReplayKind,
    seeds: std::ops::Range<u64>,
    cfg: &OpenLoopConfig,
    planner: &PlannerConfig,
) -> Vec<RunSummary> {
    let lanes = params.lane_model(cfg.speed_limit);
    seeds
        .into_par_iter()
        .map(|seed| {
            let ep = synthetic_episode(params, kind, seed);
            run_open_loop(&ep.log, ep.ego_id, ep.target_lane, &lanes, cfg, planner)
                .expect("synthetic episodes cover the horizon")
                .summary
        })
        .collect()
}

/// [`run_batch`] folded into metrics.
pub fn batch_metrics(
    params: &SyntheticParams,
    kind: ReplayKind,
    seeds: std::ops::Range<u64>,
    cfg: &OpenLoopConfig,
    planner: &PlannerConfig,
) -> Metrics {
    Metrics::aggregate(&run_batch(params, kind, seeds, cfg, planner))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(id: u64, s: f64, d: f64, v: f64) -> Agent {
        Agent::new(id, FrenetState::new(s, d, v), 5.0, 2.0)
    }

    fn cruising_log(ids: &[(u64, f64, f64, f64)], frames: usize) -> ReplayLog {
        let period = 0.1;
        let fr = (0..frames)
            .map(|k| {
                ids.iter()
                    .map(|&(id, s, d, v)| agent(id, s + v * k as f64 * period, d, v))
                    .collect()
            })
            .collect();
        ReplayLog::new(period, fr).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let ep = synthetic_episode(&SyntheticParams::default(), ReplayKind::LaneChange, 3);
        let mut buf = Vec::new();
        ep.log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(!text.contains('\r'));
        let back = ReplayLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ep.log);
    }

    #[test]
    fn rejects_broken_logs() {
        let bad_header = "frame,time,id,s,d\n0,0,1,0,0\n";
        assert!(matches!(ReplayLog::read_csv(bad_header.as_bytes()), Err(ReplayError::Invalid(_))));
        let h = CSV_HEADER;
        let backwards = format!("{h}\n1,0.1,1,0,0,0,0,5,2\n0,0.0,1,0,0,0,0,5,2\n");
        assert!(matches!(ReplayLog::read_csv(backwards.as_bytes()), Err(ReplayError::Invalid(_))));
        let gap = format!("{h}\n0,0.0,1,0,0,0,0,5,2\n1,0.1,2,0,0,0,0,5,2\n2,0.2,1,0,0,0,0,5,2\n");
        assert!(matches!(ReplayLog::read_csv(gap.as_bytes()), Err(ReplayError::Invalid(_))));
        let uneven = format!("{h}\n0,0.0,1,0,0,0,0,5,2\n1,0.1,1,0,0,0,0,5,2\n2,0.35,1,0,0,0,0,5,2\n");
        assert!(matches!(ReplayLog::read_csv(uneven.as_bytes()), Err(ReplayError::Invalid(_))));
    }

    #[test]
    fn interpolates_between_frames() {
        let log = cruising_log(&[(1, 0.0, 0.0, 10.0)], 3);
        let a = &log.agents_at(0.05)[0];
        assert!((a.state.s - 0.5).abs() < 1e-12);
        assert!((log.agents_at(0.2)[0].state.s - 2.0).abs() < 1e-12);
        // past the end holds the last frame
        assert!((log.agents_at(5.0)[0].state.s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn free_lane_keep_succeeds() {
        let log = cruising_log(&[(7, 50.0, 4.0, 12.0), (8, 60.0, 0.0, 12.0)], 121);
        let lanes = LaneModel::straight(3, 4.0, 2000.0, 20.0);
        let r = run_open_loop(&log, 7, 1, &lanes, &OpenLoopConfig::default(), &PlannerConfig::default()).unwrap();
        assert_eq!(r.end, EndReason::Completed);
        assert_eq!(r.summary.outcome, RunOutcome::Success);
        assert!(r.summary.efficiency > 12.0);
        assert!((0.0..=1.0).contains(&r.summary.risk));
    }

    #[test]
    fn missing_and_truncated() {
        let lanes = LaneModel::straight(3, 4.0, 2000.0, 20.0);
        let log = cruising_log(&[(7, 50.0, 4.0, 12.0)], 121);
        let cfg = OpenLoopConfig::default();
        let p = PlannerConfig::default();
        assert!(matches!(run_open_loop(&log, 9, 1, &lanes, &cfg, &p), Err(ReplayError::MissingEgo(9))));
        let short = cruising_log(&[(7, 50.0, 4.0, 12.0)], 50);
        assert!(matches!(run_open_loop(&short, 7, 1, &lanes, &cfg, &p), Err(ReplayError::TruncatedLog { .. })));
    }

    #[test]
    fn cut_in_records_one_outcome() {
        // an agent in the left lane swerves across the ego's lane just ahead
        let period = 0.1;
        let frames = (0..121)
            .map(|k| {
                let t = k as f64 * period;
                let d = 8.0 - 4.0 * smoothstep5((t - 1.0) / 2.0).0;
                vec![agent(1, 20.0 + 12.0 * t, 4.0, 12.0), agent(2, 35.0 + 8.0 * t, d, 8.0)]
            })
            .collect();
        let log = ReplayLog::new(period, frames).unwrap();
        let lanes = LaneModel::straight(3, 4.0, 2000.0, 20.0);
        let r = run_open_loop(&log, 1, 1, &lanes, &OpenLoopConfig::default(), &PlannerConfig::default()).unwrap();
        let m = Metrics::aggregate(std::slice::from_ref(&r.summary));
        assert_eq!(m.successes + m.failures + m.wrong_lane, 1);
    }

    #[test]
    fn synthetic_episodes_are_seeded() {
        let p = SyntheticParams::default();
        let a = synthetic_episode(&p, ReplayKind::LaneKeep, 11);
        assert_eq!(a, synthetic_episode(&p, ReplayKind::LaneKeep, 11));
        assert_ne!(a.log, synthetic_episode(&p, ReplayKind::LaneKeep, 12).log);
        let lanes = p.lane_model(20.0);
        let lc = synthetic_episode(&p, ReplayKind::LaneChange, 11);
        let (_, last) = lc.log.span(lc.ego_id).unwrap();
        let end = lc.log.frames[last].iter().find(|a| a.id == lc.ego_id).unwrap();
        assert_eq!(lanes.lane_index(end.state.d), lc.target_lane);
        assert_ne!(lanes.lane_index(lc.log.frames[0].iter().find(|a| a.id == lc.ego_id).unwrap().state.d), lc.target_lane);
    }

    #[test]
    fn batch_partitions_runs() {
        let p = SyntheticParams::default();
        let runs = run_batch(&p, ReplayKind::LaneChange, 0..6, &OpenLoopConfig::default(), &PlannerConfig::default());
        let m = Metrics::aggregate(&runs);
        assert_eq!(m.runs, 6);
        assert_eq!(m.successes + m.failures + m.wrong_lane, 6);
        assert!((0.0..=1.0).contains(&m.risk));
    }
}
