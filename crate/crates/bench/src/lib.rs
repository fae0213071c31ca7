//! Shared fixtures for the benchmarks.

use voxplan::harness::scenario::Scenario;
use voxplan::optimizer::{assemble, ideal_end_states};
use voxplan::{plan_episode, PlannerConfig, QpProblem, Scene};

/// Endurance-scenario snapshot with at most `agents` agents nearest the ego.
pub fn traffic_scene(seed: u64, agents: usize) -> Scene {
    let sc = Scenario::endurance(seed);
    let mut scene = sc.build_world().scene(f64::INFINITY);
    let ego_s = scene.ego.state.s;
    scene.agents.sort_by(|a, b| (a.state.s - ego_s).abs().total_cmp(&(b.state.s - ego_s).abs()));
    scene.agents.truncate(agents);
    scene
}

/// QPs the planner builds for each behavior's corridor on `scene`.
pub fn corridor_qps(scene: &Scene, config: &PlannerConfig) -> Vec<QpProblem> {
    let ep = match plan_episode(scene, config) {
        Ok(ep) => ep,
        Err(voxplan::PlannerError::AllBehaviorsFailed { episode, .. }) => *episode,
        Err(e) => panic!("{e}"),
    };
    ep.outcomes
        .iter()
        .filter(|o| !o.corridor.is_empty())
        .filter_map(|o| {
            let ideals = ideal_end_states(&o.corridor, scene, &config.weights, &config.limits, &config.perception);
            assemble(&o.corridor, &scene.ego.state, &ideals, &config.weights, &config.limits).ok().map(|q| q.0)
        })
        .collect()
}
