//! Ablation variants of the planner and their comparison tables.

use serde::{Deserialize, Serialize};

use crate::harness::metrics::{Metrics, RunSummary};
use crate::harness::replay::{run_batch, OpenLoopConfig, ReplayKind, SyntheticParams};
use crate::harness::scenario::Scenario;
use crate::harness::sim::{run_closed_loop, SimConfig};
use crate::planner::PlannerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Default,
    /// Full-length corridors only: no tail removal on failure.
    FixedCount,
    /// Equal segment durations.
    UniformDt,
    /// Jerk term only.
    JerkOnly,
    /// Jerk and end-state terms only.
    JerkEndStates,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Default, Variant::FixedCount, Variant::UniformDt, Variant::JerkOnly, Variant::JerkEndStates];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::FixedCount => "fixed-count",
            Variant::UniformDt => "uniform-dt",
            Variant::JerkOnly => "jerk-only",
            Variant::JerkEndStates => "jerk-end-states",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn apply(self, base: &PlannerConfig) -> PlannerConfig {
        let mut c = base.clone();
        match self {
            Variant::Default => {}
            Variant::FixedCount => c.retry.shrink = false,
            Variant::UniformDt => c.growth = 1.0,
            Variant::JerkOnly => c.weights.w[1..].iter_mut().for_each(|w| *w = 0.0),
            Variant::JerkEndStates => {
                c.weights.w[3] = 0.0;
                c.weights.w[4] = 0.0;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, v: Variant) -> Option<&Metrics> {
        self.rows.iter().find(|r| r.variant == v).map(|r| &r.metrics)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Metrics::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&r.metrics.csv_row(r.variant.name()));
            out.push('\n');
        }
        out
    }
}

/// Synthetic open-loop batches, one per variant, all on the same seeds.
pub fn open_loop_ablation(
    variants: &[Variant],
    params: &SyntheticParams,
    kinds: &[ReplayKind],
    seeds: std::ops::Range<u64>,
    cfg: &OpenLoopConfig,
    base: &PlannerConfig,
) -> AblationTable {
    let rows = variants
        .iter()
        .map(|&variant| {
            let planner = variant.apply(base);
            let runs: Vec<RunSummary> =
                kinds.iter().flat_map(|&k| run_batch(params, k, seeds.clone(), cfg, &planner)).collect();
            AblationRow { variant, metrics: Metrics::aggregate(&runs) }
        })
        .collect();
    AblationTable { rows }
}

/// One closed-loop run per variant.
pub fn closed_loop_ablation(variants: &[Variant], scenario: &Scenario, sim: &SimConfig, base: &PlannerConfig) -> AblationTable {
    let rows = variants
        .iter()
        .map(|&variant| AblationRow { variant, metrics: run_closed_loop(scenario, &variant.apply(base), sim).metrics })
        .collect();
    AblationTable { rows }
}
