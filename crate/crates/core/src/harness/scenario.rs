//! Scenario files for the closed-loop simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::sim::{IdmParams, SimAgent, SimWorld};
use crate::scene::{Agent, EgoVehicle, FrenetState, LaneModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub count: usize,
    pub width: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimits {
    /// Lane speed limit seen by the ego planner.
    pub ego: f64,
    /// Cap on every agent's desired speed.
    pub agents: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    pub s: f64,
    pub d: f64,
    pub v_s: f64,
    /// Length and width, m.
    pub dimensions: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: u64,
    pub s: f64,
    pub d: f64,
    pub v_s: f64,
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub model_params: IdmParams,
}

/// Keeps traffic around the ego: agents that fall `behind` meters behind
/// it reappear `ahead_min..ahead_max` meters ahead in a random lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecyclePolicy {
    pub behind: f64,
    pub ahead_min: f64,
    pub ahead_max: f64,
    /// Minimum center distance to any agent in the chosen lane.
    pub spacing: f64,
    pub attempts: usize,
}

impl Default for RecyclePolicy {
    fn default() -> Self {
        Self {
            behind: 120.0,
            ahead_min: 110.0,
            ahead_max: 260.0,
            spacing: 40.0,
            attempts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lanes: LaneSpec,
    pub speed_limits: SpeedLimits,
    pub ego: EgoSpec,
    pub agents: Vec<AgentSpec>,
    pub seed: u64,
    #[serde(default)]
    pub recycle: Option<RecyclePolicy>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Self = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if self.lanes.count == 0 || !(self.lanes.width > 0.0) || !(self.lanes.length > 0.0) {
            return bad("lanes need a positive count, width and length");
        }
        if !(self.speed_limits.ego > 0.0) || !(self.speed_limits.agents >= 0.0) {
            return bad("speed limits must be positive");
        }
        if !(self.ego.dimensions[0] > 0.0 && self.ego.dimensions[1] > 0.0) {
            return bad("ego dimensions must be positive");
        }
        let mut ids: Vec<u64> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("agent ids must be unique");
        }
        if self.agents.iter().any(|a| !(a.length > 0.0 && a.width > 0.0) || a.model_params.desired_speed < 0.0) {
            return bad("agents need positive dimensions and a non-negative desired speed");
        }
        Ok(())
    }

    pub fn lane_model(&self) -> LaneModel {
        LaneModel::straight(self.lanes.count, self.lanes.width, self.lanes.length, self.speed_limits.ego)
    }

    pub fn build_world(&self) -> SimWorld {
        let ego = EgoVehicle {
            state: FrenetState::new(self.ego.s, self.ego.d, self.ego.v_s),
            length: self.ego.dimensions[0],
            width: self.ego.dimensions[1],
        };
        let agents = self
            .agents
            .iter()
            .map(|a| {
                let idm = IdmParams {
                    desired_speed: a.model_params.desired_speed.min(self.speed_limits.agents),
                    ..a.model_params
                };
                SimAgent { agent: Agent::new(a.id, FrenetState::new(a.s, a.d, a.v_s), a.length, a.width), idm }
            })
            .collect();
        let mut world = SimWorld::new(self.lane_model(), ego, agents, self.seed);
        world.recycle = self.recycle;
        world
    }

    /// Long four-lane run with agents capped at 15 m/s around an ego capped
    /// at 20 m/s; agents are recycled so traffic stays around the ego.
    pub fn endurance(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lanes = LaneSpec { count: 4, width: 4.0, length: 20_000.0 };
        let ego = EgoSpec { s: 200.0, d: 4.0, v_s: 15.0, dimensions: [5.0, 2.0] };
        let gaps = Exp::new(1.0 / 250.0).expect("positive rate");
        let mut agents = Vec::new();
        for lane in 0..lanes.count {
            let d = lane as f64 * lanes.width;
            let mut s = 90.0 + rng.random_range(0.0..30.0);
            while s < 450.0 {
                let near_ego = (s - ego.s).abs() < 40.0 && (d - ego.d).abs() < 1.0;
                if !near_ego {
                    let v = rng.random_range(11.0..15.0);
                    agents.push(AgentSpec {
                        id: agents.len() as u64,
                        s,
                        d,
                        v_s: v,
                        length: 5.0,
                        width: 2.0,
                        model_params: IdmParams { desired_speed: v, ..IdmParams::default() },
                    });
                }
                s += 60.0 + gaps.sample(&mut rng);
            }
        }
        Self {
            lanes,
            speed_limits: SpeedLimits { ego: 20.0, agents: 15.0 },
            ego,
            agents,
            seed,
            recycle: Some(RecyclePolicy::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let sc = Scenario::endurance(5);
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn endurance_is_seeded() {
        assert_eq!(Scenario::endurance(9), Scenario::endurance(9));
        assert_ne!(Scenario::endurance(9), Scenario::endurance(10));
        let sc = Scenario::endurance(9);
        assert!(sc.agents.iter().all(|a| a.model_params.desired_speed <= 15.0));
        assert!(sc.agents.len() >= 4);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let mut sc = Scenario::endurance(1);
        sc.agents[1].id = sc.agents[0].id;
        assert!(matches!(Scenario::from_json(&sc.to_json()), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn agent_speeds_are_capped() {
        let mut sc = Scenario::endurance(1);
        sc.agents[0].model_params.desired_speed = 40.0;
        let w = sc.build_world();
        assert_eq!(w.agents[0].idm.desired_speed, 15.0);
    }
}
