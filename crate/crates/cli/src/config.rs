use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use voxplan::harness::replay::{OpenLoopConfig, SyntheticParams};
use voxplan::harness::sim::SimConfig;
use voxplan::PlannerConfig;

/// Everything a run can be configured with; missing sections take defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub open_loop: OpenLoopConfig,
    pub synthetic: SyntheticParams,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.planner.validate().map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(cfg)
    }
}
