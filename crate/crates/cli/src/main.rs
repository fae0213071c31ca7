//! `voxplan` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use voxplan::harness::replay::{Density, ReplayKind};

#[derive(Debug, Parser)]
#[command(name = "voxplan", version, about = "Voxel-corridor highway trajectory planner")]
pub struct Cli {
    /// JSON run configuration (planner, sim, open_loop, synthetic sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generated scenarios and replays.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, short, global = true, default_value = "out")]
    pub out: PathBuf,
    /// More output; once writes per-attempt JSONL, twice adds debug logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan one episode from a scene snapshot.
    Plan(SceneArgs),
    /// Closed-loop simulation.
    Sim(SimArgs),
    /// Open-loop replay of a log, or of a synthetic batch.
    Replay(ReplayArgs),
    /// Sweep the ablation variants.
    Ablate(AblateArgs),
    /// Write the voxel graph, corridors and QPs of one episode.
    Dump(SceneArgs),
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Scene snapshot JSON.
    #[arg(long, conflicts_with = "scenario")]
    pub scene: Option<PathBuf>,
    /// Scenario JSON; its initial state is planned. Defaults to the
    /// seeded endurance scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario JSON; defaults to the seeded endurance scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Simulated seconds, overriding the config.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Replay CSV; without it a synthetic batch is run.
    #[arg(long, requires_all = ["ego", "target_lane"])]
    pub log: Option<PathBuf>,
    /// Id of the logged vehicle the planner replaces.
    #[arg(long)]
    pub ego: Option<u64>,
    /// Lane index the run must end in.
    #[arg(long)]
    pub target_lane: Option<usize>,
    #[command(flatten)]
    pub batch: BatchArgs,
    /// Also write every synthetic log to `logs/`.
    #[arg(long)]
    pub save_logs: bool,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Both)]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value_t = DensityArg::Moderate)]
    pub density: DensityArg,
    /// Runs per kind; seeds are `seed..seed + runs`.
    #[arg(long, default_value_t = 100)]
    pub runs: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum, default_value_t = HarnessArg::Open)]
    pub harness: HarnessArg,
    /// Variant names; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Scenario JSON for the closed-loop harness.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub batch: AblateBatchArgs,
}

#[derive(Debug, Args)]
pub struct AblateBatchArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Lk)]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value_t = DensityArg::Dense)]
    pub density: DensityArg,
    #[arg(long, default_value_t = 50)]
    pub runs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Lk,
    Lc,
    Both,
}

impl KindArg {
    pub fn kinds(self) -> Vec<ReplayKind> {
        match self {
            KindArg::Lk => vec![ReplayKind::LaneKeep],
            KindArg::Lc => vec![ReplayKind::LaneChange],
            KindArg::Both => vec![ReplayKind::LaneKeep, ReplayKind::LaneChange],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityArg {
    Sparse,
    Moderate,
    Dense,
}

impl From<DensityArg> for Density {
    fn from(d: DensityArg) -> Self {
        match d {
            DensityArg::Sparse => Density::Sparse,
            DensityArg::Moderate => Density::Moderate,
            DensityArg::Dense => Density::Dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HarnessArg {
    Open,
    Closed,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    commands::run(&cli)
}
