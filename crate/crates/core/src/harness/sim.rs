//! Closed-loop traffic simulation: IDM agents in fixed lanes, an ego that
//! follows its latest plan, and replanning at the planner's period.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bezier::{Axis, PiecewiseBezier};
use crate::harness::metrics::{
    compute_risk, lateral_overlap, Metrics, RunOutcome, RunSummary, Trace, TraceFrame,
};
use crate::harness::scenario::{RecyclePolicy, Scenario};
use crate::optimizer::AttemptRecord;
use crate::planner::{plan_episode, BehaviorFailure, EpisodeResult, PlannerConfig, PlannerError};
use crate::scene::{Agent, EgoVehicle, FrenetState, LaneModel, Scene};
use crate::voxel_graph::Behavior;

/// Intelligent driver model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    /// Standstill gap, m.
    pub min_gap: f64,
    /// Time headway, s.
    pub headway: f64,
    pub exponent: f64,
    /// Hard floor on the commanded acceleration.
    pub max_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 15.0,
            max_accel: 1.5,
            comfort_decel: 1.5,
            min_gap: 2.0,
            headway: 1.5,
            exponent: 4.0,
            max_decel: 9.0,
        }
    }
}

/// IDM acceleration; `leader` is `(bumper gap, leader speed)`.
pub fn idm_accel(v: f64, leader: Option<(f64, f64)>, p: &IdmParams) -> f64 {
    if p.desired_speed <= 0.0 {
        // parked
        return if v > 0.0 { -p.comfort_decel } else { 0.0 };
    }
    let free = 1.0 - (v.max(0.0) / p.desired_speed).powf(p.exponent);
    let interaction = match leader {
        None => 0.0,
        Some((gap, v_lead)) => {
            let dv = v - v_lead;
            let s_star = p.min_gap + (v * p.headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            (s_star / gap.max(1e-3)).powi(2)
        }
    };
    (p.max_accel * (free - interaction)).max(-p.max_decel)
}

/// Advances `(s, v)` under constant acceleration, stopping at zero speed.
pub fn integrate(s: f64, v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v_next = v + a * dt;
    if v_next < 0.0 {
        // stops inside the step
        (s + v * v / (-2.0 * a), 0.0)
    } else {
        (s + v * dt + 0.5 * a * dt * dt, v_next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAgent {
    pub agent: Agent,
    pub idm: IdmParams,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("collision between ego and agent {agent} at t = {t:.2} s")]
    CollisionDetected { agent: u64, t: f64 },
    #[error("ego has no trajectory to follow")]
    NoTrajectory,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub lanes: LaneModel,
    pub ego: EgoVehicle,
    pub plan: Option<PiecewiseBezier>,
    /// Clock time at which the plan's local time is zero.
    pub plan_start: f64,
    pub agents: Vec<SimAgent>,
    pub clock: f64,
    pub seed: u64,
    pub recycle: Option<RecyclePolicy>,
    rng: ChaCha8Rng,
}

impl SimWorld {
    pub fn new(lanes: LaneModel, ego: EgoVehicle, agents: Vec<SimAgent>, seed: u64) -> Self {
        Self {
            lanes,
            ego,
            plan: None,
            plan_start: 0.0,
            agents,
            clock: 0.0,
            seed,
            recycle: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn agent_snapshot(&self) -> Vec<Agent> {
        self.agents.iter().map(|a| a.agent.clone()).collect()
    }

    /// Scene seen by the planner now, limited to the sensing range.
    pub fn scene(&self, sensing_range: f64) -> Scene {
        let agents = self
            .agents
            .iter()
            .filter(|a| (a.agent.state.s - self.ego.state.s).abs() <= sensing_range)
            .map(|a| a.agent.clone())
            .collect();
        Scene::new(self.lanes.clone(), self.ego, agents, self.clock).expect("simulated scene is valid")
    }

    /// Ego state and jerk along the plan at clock time `t`.
    fn ego_on_plan(&self, t: f64) -> Option<(FrenetState, [f64; 2])> {
        let plan = self.plan.as_ref()?;
        Some(sample_plan(plan, t - self.plan_start))
    }

    /// First ego-agent box overlap.
    pub fn collision(&self) -> Option<u64> {
        let e = &self.ego;
        self.agents.iter().map(|a| &a.agent).find(|a| boxes_overlap(e, a)).map(|a| a.id)
    }

    fn recycle_agents(&mut self) {
        let Some(policy) = self.recycle else {
            return;
        };
        let ego_s = self.ego.state.s;
        for k in 0..self.agents.len() {
            if self.agents[k].agent.state.s >= ego_s - policy.behind {
                continue;
            }
            for _ in 0..policy.attempts {
                let lane = self.rng.random_range(0..self.lanes.lane_count);
                let s = ego_s + self.rng.random_range(policy.ahead_min..policy.ahead_max);
                let d = self.lanes.lane_center(lane);
                let clear = self.agents.iter().enumerate().all(|(j, o)| {
                    j == k || (o.agent.state.s - s).abs() >= policy.spacing || (o.agent.state.d - d).abs() >= 0.5 * self.lanes.lane_width
                });
                if clear {
                    let a = &mut self.agents[k];
                    let v = a.idm.desired_speed;
                    a.agent.state = FrenetState::new(s, d, v);
                    break;
                }
            }
        }
    }
}

/// State of a plan at local time `t`, extrapolated at constant speed past its end.
pub fn sample_plan(plan: &PiecewiseBezier, t: f64) -> (FrenetState, [f64; 2]) {
    let end = plan.end();
    let tc = t.clamp(plan.start(), end);
    let mut st = FrenetState {
        s: plan.eval(tc, Axis::S, 0),
        d: plan.eval(tc, Axis::D, 0),
        v_s: plan.eval(tc, Axis::S, 1),
        v_d: plan.eval(tc, Axis::D, 1),
        a_s: plan.eval(tc, Axis::S, 2),
        a_d: plan.eval(tc, Axis::D, 2),
    };
    let mut jerk = [plan.eval(tc, Axis::S, 3), plan.eval(tc, Axis::D, 3)];
    if t > end {
        st.s += st.v_s * (t - end);
        st.d += st.v_d * (t - end);
        st.a_s = 0.0;
        st.a_d = 0.0;
        jerk = [0.0, 0.0];
    }
    (st, jerk)
}

/// Axis-aligned box overlap in the (s, d) plane.
pub fn boxes_overlap(ego: &EgoVehicle, a: &Agent) -> bool {
    (ego.state.s - a.state.s).abs() < 0.5 * (ego.length + a.length)
        && lateral_overlap(ego.state.d, ego.width, a.state.d, a.width)
}

/// Advances the world by `dt`: the ego along its plan, agents under IDM.
///
/// Agents follow the closest vehicle ahead that overlaps them laterally,
/// the ego included.
pub fn step_sim(mut world: SimWorld, dt: f64) -> Result<SimWorld, SimError> {
    let t_next = world.clock + dt;
    let (ego_next, _) = world.ego_on_plan(t_next).ok_or(SimError::NoTrajectory)?;

    let accels: Vec<f64> = world
        .agents
        .iter()
        .map(|me| {
            let a = &me.agent;
            let ego_lead = (world.ego.state.s > a.state.s
                && lateral_overlap(world.ego.state.d, world.ego.width, a.state.d, a.width))
            .then(|| (world.ego.state.s - 0.5 * world.ego.length, world.ego.state.v_s));
            let agent_lead = world
                .agents
                .iter()
                .map(|o| &o.agent)
                .filter(|o| o.id != a.id && o.state.s > a.state.s && lateral_overlap(o.state.d, o.width, a.state.d, a.width))
                .map(|o| (o.state.s - 0.5 * o.length, o.state.v_s));
            let leader = ego_lead
                .into_iter()
                .chain(agent_lead)
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .map(|(rear, v)| (rear - (a.state.s + 0.5 * a.length), v));
            idm_accel(a.state.v_s, leader, &me.idm)
        })
        .collect();

    for (me, acc) in world.agents.iter_mut().zip(accels) {
        let st = &mut me.agent.state;
        let (s, v) = integrate(st.s, st.v_s, acc, dt);
        st.s = s;
        let cap = me.idm.desired_speed;
        st.v_s = if st.v_s <= cap { v.min(cap) } else { v };
        st.a_s = acc;
    }
    world.ego.state = ego_next;
    world.clock = t_next;
    world.recycle_agents();
    if let Some(agent) = world.collision() {
        return Err(SimError::CollisionDetected { agent, t: world.clock });
    }
    Ok(world)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulation step, s.
    pub dt: f64,
    /// Simulated time, s.
    pub duration: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.05, duration: 60.0 }
    }
}

/// One behavior's result at a planning tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub behavior: Behavior,
    pub cost: Option<f64>,
    pub failure: Option<BehaviorFailure>,
    pub attempts: Vec<AttemptRecord>,
}

/// Record of one planning tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub selected: Option<Behavior>,
    pub cost: Option<f64>,
    pub outcomes: Vec<TickOutcome>,
    #[serde(skip)]
    pub latency_ms: f64,
}

impl TickRecord {
    pub fn from_episode(t: f64, ep: &EpisodeResult, selected: Option<Behavior>) -> Self {
        let outcomes = ep
            .outcomes
            .iter()
            .map(|o| TickOutcome {
                behavior: o.behavior,
                cost: o.result.as_ref().ok().map(|c| c.cost),
                failure: o.result.as_ref().err().cloned(),
                attempts: o.attempts.clone(),
            })
            .collect();
        Self {
            t,
            selected,
            cost: selected.and_then(|b| ep.outcome(b).result.as_ref().ok().map(|c| c.cost)),
            outcomes,
            latency_ms: ep.timing.total_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndReason {
    Completed,
    Collision { agent: u64 },
    PlanningAborted,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub metrics: Metrics,
    pub summary: RunSummary,
    pub end: EndReason,
    pub trace: Trace,
    pub ticks: Vec<TickRecord>,
    /// Plans in force at each successful tick, with their start time.
    pub plans: Vec<(f64, PiecewiseBezier)>,
}

/// Consecutive failed ticks tolerated before aborting; the previous plan
/// is reused meanwhile.
pub const GRACE_TICKS: usize = 1;

/// Counts lane index changes along the trace.
pub fn count_lane_changes(trace: &Trace, lanes: &LaneModel) -> usize {
    trace
        .frames
        .windows(2)
        .filter(|w| lanes.lane_index(w[0].ego.d) != lanes.lane_index(w[1].ego.d))
        .count()
}

/// Replans every `config.replan_period` and steps the world in between.
pub fn run_closed_loop(scenario: &Scenario, config: &PlannerConfig, sim: &SimConfig) -> ClosedLoopResult {
    let mut world = scenario.build_world();
    let steps_per_tick = ((config.replan_period / sim.dt).round() as usize).max(1);
    let ticks_total = (sim.duration / (steps_per_tick as f64 * sim.dt)).round() as usize;
    let range = config.perception.sensing_range;

    let mut trace = Trace { ego_length: world.ego.length, ego_width: world.ego.width, frames: Vec::new() };
    let mut ticks = Vec::new();
    let mut plans = Vec::new();
    let mut failed_ticks = 0;
    let mut consecutive = 0;
    let mut end = EndReason::Completed;

    let record = |world: &SimWorld, trace: &mut Trace| {
        let jerk = world.ego_on_plan(world.clock).map_or([0.0, 0.0], |x| x.1);
        trace.frames.push(TraceFrame {
            t: world.clock,
            ego: world.ego.state,
            jerk_s: jerk[0],
            jerk_d: jerk[1],
            agents: world
                .agents
                .iter()
                .filter(|a| (a.agent.state.s - world.ego.state.s).abs() <= range)
                .map(|a| a.agent.clone())
                .collect(),
        });
    };

    'outer: for _ in 0..ticks_total {
        let scene = world.scene(range);
        match plan_episode(&scene, config) {
            Ok(ep) => {
                consecutive = 0;
                ticks.push(TickRecord::from_episode(world.clock, &ep, ep.selected));
                let plan = ep.trajectory.expect("successful episode has a trajectory");
                plans.push((world.clock, plan.clone()));
                world.plan = Some(plan);
                world.plan_start = world.clock;
            }
            Err(PlannerError::AllBehaviorsFailed { episode, .. }) => {
                ticks.push(TickRecord::from_episode(world.clock, &episode, None));
                failed_ticks += 1;
                consecutive += 1;
                if consecutive > GRACE_TICKS || world.plan.is_none() {
                    end = EndReason::PlanningAborted;
                    break;
                }
            }
            Err(e @ PlannerError::InvalidConfig(_)) => panic!("{e}"),
        }
        if trace.frames.is_empty() {
            record(&world, &mut trace);
        }
        for _ in 0..steps_per_tick {
            match step_sim(world.clone(), sim.dt) {
                Ok(w) => world = w,
                Err(SimError::CollisionDetected { agent, .. }) => {
                    end = EndReason::Collision { agent };
                    break 'outer;
                }
                Err(SimError::NoTrajectory) => unreachable!("a plan is in force"),
            }
            record(&world, &mut trace);
        }
    }

    let summary = RunSummary {
        outcome: if end == EndReason::Completed { RunOutcome::Success } else { RunOutcome::Failure },
        risk: compute_risk(&trace, &config.limits),
        efficiency: trace.mean_speed(),
        collisions: usize::from(matches!(end, EndReason::Collision { .. })),
        planning_failures: failed_ticks,
        lane_changes: count_lane_changes(&trace, &world.lanes),
        latencies_ms: ticks.iter().map(|t| t.latency_ms).collect(),
    };
    ClosedLoopResult {
        metrics: Metrics::aggregate(std::slice::from_ref(&summary)),
        summary,
        end,
        trace,
        ticks,
        plans,
    }
}
