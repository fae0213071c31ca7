use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use voxplan::bezier::write_samples_csv;
use voxplan::harness::ablation::{closed_loop_ablation, open_loop_ablation, Variant};
use voxplan::harness::metrics::{Metrics, RunSummary};
use voxplan::harness::replay::{
    run_batch, run_open_loop, synthetic_episode, Density, ReplayKind, ReplayLog, SyntheticParams,
};
use voxplan::harness::scenario::Scenario;
use voxplan::harness::sim::{run_closed_loop, EndReason, TickRecord};
use voxplan::harness::svg::{corridor_svg, profiles_svg, trace_samples};
use voxplan::optimizer::{assemble, ideal_end_states, Origin};
use voxplan::planner::BehaviorFailure;
use voxplan::qp::QpDump;
use voxplan::{plan_episode, Behavior, EpisodeResult, PlannerError, Scene, Voxel};

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::{AblateArgs, Cli, Command, HarnessArg, ReplayArgs, SceneArgs, SimArgs};

const TRAJECTORY_STEP: f64 = 0.02;

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let out = OutDir::create(&cli.out)?;
    out.json("config.json", &cfg)?;
    match &cli.command {
        Command::Plan(a) => plan(cli, &cfg, &out, a),
        Command::Sim(a) => sim(cli, &cfg, &out, a),
        Command::Replay(a) => replay(cli, &cfg, &out, a),
        Command::Ablate(a) => ablate(cli, &cfg, &out, a),
        Command::Dump(a) => dump(cli, &cfg, &out, a),
    }
}

fn load_scenario(path: Option<&Path>, seed: u64) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Scenario::endurance(seed)),
    }
}

fn load_scene(cli: &Cli, cfg: &RunConfig, args: &SceneArgs) -> Result<Scene> {
    if let Some(p) = &args.scene {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let raw: Scene = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        return Ok(Scene::new(raw.lanes, raw.ego, raw.agents, raw.timestamp)?);
    }
    let sc = load_scenario(args.scenario.as_deref(), cli.seed)?;
    Ok(sc.build_world().scene(cfg.planner.perception.sensing_range))
}

/// Episode result without timings, so reruns serialize identically.
#[derive(Debug, Serialize)]
struct EpisodeSummary {
    timestamp: f64,
    selected: Option<Behavior>,
    cost: Option<f64>,
    behaviors: Vec<BehaviorSummary>,
}

#[derive(Debug, Serialize)]
struct BehaviorSummary {
    behavior: Behavior,
    cost: Option<f64>,
    failure: Option<BehaviorFailure>,
    corridor_voxels: usize,
    trajectory_segments: Option<usize>,
    attempts: usize,
}

impl EpisodeSummary {
    fn new(scene: &Scene, ep: &EpisodeResult) -> Self {
        let behaviors = ep
            .outcomes
            .iter()
            .map(|o| BehaviorSummary {
                behavior: o.behavior,
                cost: o.result.as_ref().ok().map(|c| c.cost),
                failure: o.result.as_ref().err().cloned(),
                corridor_voxels: o.corridor.len(),
                trajectory_segments: o.result.as_ref().ok().map(|c| c.sequence.len()),
                attempts: o.attempts.len(),
            })
            .collect();
        Self { timestamp: scene.timestamp, selected: ep.selected, cost: ep.cost, behaviors }
    }
}

/// Runs the planner, keeping the episode even when every behavior failed.
fn episode(scene: &Scene, cfg: &RunConfig) -> Result<EpisodeResult> {
    match plan_episode(scene, &cfg.planner) {
        Ok(ep) => Ok(ep),
        Err(PlannerError::AllBehaviorsFailed { episode, reasons }) => {
            log::warn!("every behavior failed: {reasons:?}");
            Ok(*episode)
        }
        Err(e) => Err(e.into()),
    }
}

fn log_timing(ep: &EpisodeResult) {
    let t = &ep.timing;
    log::info!(
        "episode {:.2} ms (voxelize {:.2}, graph {:.2}, behaviors {:.2})",
        t.total_ms,
        t.voxelize_ms,
        t.graph_ms,
        t.behaviors_ms
    );
}

fn plan(cli: &Cli, cfg: &RunConfig, out: &OutDir, args: &SceneArgs) -> Result<()> {
    let scene = load_scene(cli, cfg, args)?;
    out.json("scene.json", &scene)?;
    let ep = episode(&scene, cfg)?;
    log_timing(&ep);
    out.json("metrics.json", &EpisodeSummary::new(&scene, &ep))?;
    let chosen = ep.selected_outcome();
    let corridor: &[Voxel] = chosen.map_or(&[], |o| o.corridor.as_slice());
    out.text("corridor.svg", &corridor_svg(ep.trajectory.as_ref(), corridor))?;
    if let Some(traj) = &ep.trajectory {
        traj.write_csv(TRAJECTORY_STEP, out.file("trajectory.csv")?)?;
        let a_max = cfg.planner.limits.a_s.max;
        out.text("profiles.svg", &profiles_svg(&traj.sample(TRAJECTORY_STEP), Some(a_max)))?;
    }
    if cli.verbose > 0 {
        out.attempts("attempts.jsonl", &[TickRecord::from_episode(scene.timestamp, &ep, ep.selected)])?;
    }
    match ep.selected {
        Some(b) => println!("selected {b:?}, cost {:.4}", ep.cost.unwrap_or(f64::NAN)),
        None => println!("no behavior succeeded"),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimSummary {
    end: EndReason,
    simulated: f64,
    ticks: usize,
    lane_changes: usize,
    average_speed: f64,
}

fn metrics_csv(name: &str, m: &Metrics) -> String {
    format!("{}\n{}\n", Metrics::CSV_HEADER, m.csv_row(name))
}

fn sim(cli: &Cli, cfg: &RunConfig, out: &OutDir, args: &SimArgs) -> Result<()> {
    let scenario = load_scenario(args.scenario.as_deref(), cli.seed)?;
    out.text("scenario.json", &(scenario.to_json() + "\n"))?;
    let mut sim_cfg = cfg.sim;
    if let Some(d) = args.duration {
        sim_cfg.duration = d;
    }
    if !(sim_cfg.dt > 0.0 && sim_cfg.duration > 0.0) {
        bail!("sim dt and duration must be positive");
    }
    let r = run_closed_loop(&scenario, &cfg.planner, &sim_cfg);
    log::info!("mean episode latency {:.2} ms over {} episodes", r.metrics.latency.mean_ms, r.metrics.latency.episodes);
    out.json("metrics.json", &r.metrics)?;
    out.text("metrics.csv", &metrics_csv("sim", &r.metrics))?;
    let summary = SimSummary {
        end: r.end,
        simulated: r.trace.frames.last().map_or(0.0, |f| f.t),
        ticks: r.ticks.len(),
        lane_changes: r.metrics.lane_changes,
        average_speed: r.trace.mean_speed(),
    };
    out.json("summary.json", &summary)?;
    let samples = trace_samples(&r.trace);
    write_samples_csv(&samples, out.file("trace.csv")?)?;
    out.text("profiles.svg", &profiles_svg(&samples, Some(cfg.planner.limits.a_s.max)))?;
    if let Some((_, plan)) = r.plans.last() {
        plan.write_csv(TRAJECTORY_STEP, out.file("trajectory.csv")?)?;
    }
    if cli.verbose > 0 {
        out.attempts("attempts.jsonl", &r.ticks)?;
    }
    println!(
        "{:?} after {:.1} s: avg v {:.2} m/s, {} lane changes, {} failed ticks",
        summary.end, summary.simulated, summary.average_speed, summary.lane_changes, r.metrics.planning_failures
    );
    Ok(())
}

fn kind_name(k: ReplayKind) -> &'static str {
    match k {
        ReplayKind::LaneKeep => "lk",
        ReplayKind::LaneChange => "lc",
    }
}

fn replay(cli: &Cli, cfg: &RunConfig, out: &OutDir, args: &ReplayArgs) -> Result<()> {
    if let Some(path) = &args.log {
        let log = ReplayLog::load(path).with_context(|| format!("loading {}", path.display()))?;
        let (ego, target) = (args.ego.expect("clap requires ego"), args.target_lane.expect("clap requires lane"));
        let p = &cfg.synthetic;
        let lanes = voxplan::LaneModel::straight(
            p.lanes,
            p.lane_width,
            log.frames.iter().flatten().map(|a| a.state.s).fold(0.0, f64::max) + 1000.0,
            cfg.open_loop.speed_limit,
        );
        if target >= lanes.lane_count {
            bail!("target lane {target} outside the {} configured lanes", lanes.lane_count);
        }
        let r = run_open_loop(&log, ego, target, &lanes, &cfg.open_loop, &cfg.planner)?;
        let m = Metrics::aggregate(std::slice::from_ref(&r.summary));
        out.json("metrics.json", &m)?;
        out.text("metrics.csv", &metrics_csv("replay", &m))?;
        let samples = trace_samples(&r.trace);
        out.text("profiles.svg", &profiles_svg(&samples, Some(cfg.planner.limits.a_s.max)))?;
        if cli.verbose > 0 {
            out.attempts("attempts.jsonl", &r.ticks)?;
        }
        println!("{:?}: {:?}, final lane {}", r.end, r.summary.outcome, r.final_lane);
        return Ok(());
    }

    let params = SyntheticParams { density: Density::from(args.batch.density).per_km(), ..cfg.synthetic };
    let seeds = cli.seed..cli.seed + args.batch.runs;
    let mut all: Vec<RunSummary> = Vec::new();
    let mut csv = String::from(Metrics::CSV_HEADER);
    csv.push('\n');
    let mut runs = String::from("kind,seed,outcome,risk,efficiency,planning_failures\n");
    for kind in args.batch.kind.kinds() {
        let summaries = run_batch(&params, kind, seeds.clone(), &cfg.open_loop, &cfg.planner);
        for (seed, s) in seeds.clone().zip(&summaries) {
            runs.push_str(&format!(
                "{},{seed},{:?},{:.6},{:.6},{}\n",
                kind_name(kind),
                s.outcome,
                s.risk,
                s.efficiency,
                s.planning_failures
            ));
        }
        let m = Metrics::aggregate(&summaries);
        log::info!("{kind:?}: mean episode latency {:.2} ms", m.latency.mean_ms);
        csv.push_str(&m.csv_row(kind_name(kind)));
        csv.push('\n');
        println!("{}", m.csv_row(kind_name(kind)));
        all.extend(summaries);
        if args.save_logs {
            for seed in seeds.clone() {
                let ep = synthetic_episode(&params, kind, seed);
                let name = format!("logs/{}-{seed}-ego{}-lane{}.csv", kind_name(kind), ep.ego_id, ep.target_lane);
                std::fs::create_dir_all(out.path("logs"))?;
                ep.log.write_csv(out.file(&name)?)?;
            }
        }
    }
    let total = Metrics::aggregate(&all);
    csv.push_str(&total.csv_row("all"));
    csv.push('\n');
    out.json("metrics.json", &total)?;
    out.text("metrics.csv", &csv)?;
    out.text("runs.csv", &runs)?;
    Ok(())
}

fn ablate(cli: &Cli, cfg: &RunConfig, out: &OutDir, args: &AblateArgs) -> Result<()> {
    let variants: Vec<Variant> = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants
            .iter()
            .map(|n| Variant::parse(n).with_context(|| format!("unknown variant {n:?}")))
            .collect::<Result<_>>()?
    };
    let table = match args.harness {
        HarnessArg::Open => {
            let b = &args.batch;
            let params = SyntheticParams { density: Density::from(b.density).per_km(), ..cfg.synthetic };
            open_loop_ablation(&variants, &params, &b.kind.kinds(), cli.seed..cli.seed + b.runs, &cfg.open_loop, &cfg.planner)
        }
        HarnessArg::Closed => {
            let scenario = load_scenario(args.scenario.as_deref(), cli.seed)?;
            closed_loop_ablation(&variants, &scenario, &cfg.sim, &cfg.planner)
        }
    };
    out.json("metrics.json", &table)?;
    let csv = table.to_csv();
    out.text("metrics.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct CorridorDump<'a> {
    behavior: Behavior,
    corridor: &'a [Voxel],
    sequence: Option<&'a [Voxel]>,
}

#[derive(Debug, Serialize)]
struct QpEntry {
    behavior: Behavior,
    origin: Origin,
    qp: QpDump,
}

fn dump(cli: &Cli, cfg: &RunConfig, out: &OutDir, args: &SceneArgs) -> Result<()> {
    let scene = load_scene(cli, cfg, args)?;
    out.json("scene.json", &scene)?;
    let ep = episode(&scene, cfg)?;
    out.json("metrics.json", &EpisodeSummary::new(&scene, &ep))?;
    out.json("graph.json", &ep.graph)?;
    let corridors: Vec<CorridorDump> = ep
        .outcomes
        .iter()
        .map(|o| CorridorDump {
            behavior: o.behavior,
            corridor: &o.corridor,
            sequence: o.result.as_ref().ok().map(|c| c.sequence.as_slice()),
        })
        .collect();
    out.json("corridors.json", &corridors)?;
    let p = &cfg.planner;
    let mut qps = Vec::new();
    for o in ep.outcomes.iter().filter(|o| !o.corridor.is_empty()) {
        let ideals = ideal_end_states(&o.corridor, &scene, &p.weights, &p.limits, &p.perception);
        match assemble(&o.corridor, &scene.ego.state, &ideals, &p.weights, &p.limits) {
            Ok((qp, origin)) => qps.push(QpEntry { behavior: o.behavior, origin, qp: qp.to_dump() }),
            Err(e) => log::warn!("{:?}: {e}", o.behavior),
        }
    }
    out.json("qp.json", &qps)?;
    for o in ep.outcomes.iter().filter(|o| !o.corridor.is_empty()) {
        let traj = o.result.as_ref().ok().map(|c| &c.trajectory);
        out.text(&format!("corridor-{:?}.svg", o.behavior), &corridor_svg(traj, &o.corridor))?;
    }
    println!("{} graph nodes, {} QPs", ep.graph.node_count(), qps.len());
    Ok(())
}
