//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing libtest capture) before asserting.

use std::cmp::Ordering;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxplan::bezier::{bernstein_sum, derivative_control_points};
use voxplan::harness::ablation::{open_loop_ablation, Variant};
use voxplan::harness::metrics::{Metrics, RunOutcome};
use voxplan::harness::replay::{run_batch, Density, OpenLoopConfig, ReplayKind, SyntheticParams};
use voxplan::harness::scenario::Scenario;
use voxplan::harness::sim::{run_closed_loop, SimConfig};
use voxplan::qp::{check_kkt, solve};
use voxplan::voxel_graph::{compare_paths, search, ParentEdge, VoxelNode};
use voxplan::voxelizer::{free_ranges, make_partition, CorridorParams};
use voxplan::{
    plan_episode, Agent, Axis, Behavior, BezierSegment, EgoVehicle, FrenetState, KinodynamicLimits, LaneLabel,
    LaneModel, PerceptionParams, PlannerConfig, PlannerError, QpProblem, QpStatus, Scene, SolverOptions, Voxel,
    VoxelGraph,
};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict} {name} ({detail})");
}

// ---------------------------------------------------------------- 1. QP

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=12);
    let m_eq = rng.random_range(0..=n.min(3)).min(n - 1);
    let m_in = rng.random_range(0..=24);
    let uni = |rng: &mut ChaCha8Rng, r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let m = uni(rng, n, n);
    let eps = rng.random_range(0.1..1.0);
    let h = m.transpose() * &m + DMatrix::identity(n, n) * eps;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = uni(rng, m_eq, n);
    let b_eq = &a_eq * &x0;
    let a_in = uni(rng, m_in, n);
    let ax = &a_in * &x0;
    let mut lb = DVector::from_element(m_in, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(m_in, f64::INFINITY);
    for i in 0..m_in {
        if rng.random_bool(0.8) {
            lb[i] = ax[i] - rng.random_range(0.0..1.0);
        }
        if rng.random_bool(0.8) {
            ub[i] = ax[i] + rng.random_range(0.0..1.0);
        }
    }
    QpProblem { h, g, a_eq, b_eq, a_in, lb, ub }
}

/// Accelerated projected gradient on the dual (multipliers of equalities
/// free, of finite inequality sides non-negative), with adaptive restart.
/// Returns the primal point and its objective once the duality gap and the
/// primal violation both fall below 1e-10.
fn projected_gradient_oracle(p: &QpProblem) -> (DVector<f64>, f64) {
    let n = p.g.len();
    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    for i in 0..p.a_eq.nrows() {
        rows.push((p.a_eq.row(i).transpose(), p.b_eq[i], true));
    }
    for i in 0..p.a_in.nrows() {
        let a = p.a_in.row(i).transpose();
        if p.ub[i].is_finite() {
            rows.push((a.clone(), p.ub[i], false));
        }
        if p.lb[i].is_finite() {
            rows.push((-a, -p.lb[i], false));
        }
    }
    let m = rows.len();
    let chol = p.h.clone().cholesky().expect("oracle needs positive definite H");
    let hinv = chol.inverse();
    let x_of = |y: &DVector<f64>| -> DVector<f64> {
        let mut v = p.g.clone();
        for (k, (a, _, _)) in rows.iter().enumerate() {
            v += a * y[k];
        }
        -(&hinv * v)
    };
    if m == 0 {
        let x = x_of(&DVector::zeros(0));
        let f = p.objective(&x);
        return (x, f);
    }
    let k = DMatrix::from_fn(m, n, |r, c| rows[r].0[c]);
    let c = DVector::from_fn(m, |r, _| rows[r].1);
    let q = &k * &hinv * k.transpose();
    let r = &k * (&hinv * &p.g) + &c;
    let lip = q.clone().symmetric_eigenvalues().max().max(1e-12);
    let project = |y: &mut DVector<f64>| {
        for (i, (_, _, free)) in rows.iter().enumerate() {
            if !free {
                y[i] = y[i].max(0.0);
            }
        }
    };
    let dual = |y: &DVector<f64>| -> f64 {
        // q(y) = -(1/2) y'Qy - r'y - (1/2) g'H^-1 g
        -(0.5 * y.dot(&(&q * y)) + r.dot(y) + 0.5 * p.g.dot(&(&hinv * &p.g)))
    };
    let mut y = DVector::zeros(m);
    let mut z = y.clone();
    let mut t = 1.0_f64;
    for it in 1..=2_000_000 {
        let mut y_new = &z - (&q * &z + &r) / lip;
        project(&mut y_new);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if (&z - &y_new).dot(&(&y_new - &y)) > 0.0 {
            t = 1.0;
            z = y_new.clone();
        } else {
            z = &y_new + (&y_new - &y) * ((t - 1.0) / t_new);
            t = t_new;
        }
        y = y_new;
        if it % 50 == 0 {
            let x = x_of(&y);
            let f = p.objective(&x);
            let viol = rows.iter().map(|(a, b, free)| {
                let e = a.dot(&x) - b;
                if *free { e.abs() } else { e.max(0.0) }
            });
            let viol = viol.fold(0.0, f64::max);
            let gap = (f - dual(&y)).abs();
            if viol < 1e-10 && gap < 1e-10 * (1.0 + f.abs()) {
                return (x, f);
            }
        }
    }
    panic!("projected-gradient oracle did not converge");
}

#[test]
fn criterion_01_qp_matches_projected_gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = SolverOptions::default();
    let (mut worst_obj, mut worst_kkt) = (0.0_f64, 0.0_f64);
    let mut failures = Vec::new();
    for case in 0..500 {
        let p = random_qp(&mut rng);
        let (_, f_oracle) = projected_gradient_oracle(&p);
        let sol = solve(&p, &opts).expect("well-formed problem");
        let kkt = check_kkt(&p, &sol.x, &sol.multipliers).unwrap();
        let diff = (sol.objective - f_oracle).abs();
        worst_obj = worst_obj.max(diff);
        worst_kkt = worst_kkt.max(kkt.max_residual());
        if sol.status != QpStatus::Optimal || diff > 1e-5 || kkt.max_residual() > 1e-6 {
            failures.push((case, sol.status, diff, kkt));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 30.0;
    report(
        1,
        "QP oracle suite",
        pass,
        &format!("500 QPs, max |f - f_oracle| {worst_obj:.2e}, max KKT residual {worst_kkt:.2e}, {secs:.1} s"),
    );
    assert!(failures.is_empty(), "{} failures, first: {:?}", failures.len(), failures.first());
    assert!(secs < 30.0, "took {secs:.1} s");
}

// ---------------------------------------------------------------- 2. Bezier

#[test]
fn criterion_02_bezier_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    let mut ok = true;
    for _ in 0..10_000 {
        let pts: [f64; 6] = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
        let lt = rng.random_range(-10.0..10.0);
        let dt = rng.random_range(0.1..5.0);
        let seg = BezierSegment { s: pts, d: pts.map(|v| -0.5 * v), lt, ut: lt + dt };
        let dt = seg.duration();
        for axis in [Axis::S, Axis::D] {
            let p = *seg.points(axis);
            // derivatives: control-point form against central differences
            for order in 1..=3 {
                let dp = derivative_control_points(&p, dt, order);
                let scale = dp.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-9);
                let h = 1e-4 * dt;
                for _ in 0..3 {
                    let u: f64 = rng.random_range(0.01..0.99);
                    let t = lt + u * dt;
                    let fd = (seg.evaluate(t + h, axis, order - 1).unwrap() - seg.evaluate(t - h, axis, order - 1).unwrap())
                        / (2.0 * h);
                    let exact = seg.evaluate(t, axis, order).unwrap();
                    let rel = (fd - exact).abs() / scale;
                    worst = worst.max(rel);
                    ok &= rel <= 1e-5;
                }
                // exact endpoints of every derivative
                ok &= seg.evaluate(lt, axis, order).unwrap() == dp[0];
                ok &= seg.evaluate(lt + dt, axis, order).unwrap() == *dp.last().unwrap();
            }
            // positions: exact endpoints, samples inside the hull
            ok &= seg.evaluate(lt, axis, 0).unwrap() == dt * p[0];
            ok &= seg.evaluate(seg.ut, axis, 0).unwrap() == seg.end_position(axis);
            let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(dt * v), b.max(dt * v)));
            for k in 0..=20 {
                let u = k as f64 / 20.0;
                let x = dt * bernstein_sum(&p, u);
                ok &= x >= lo - 1e-12 * hi.abs().max(lo.abs()) && x <= hi + 1e-12 * hi.abs().max(lo.abs());
            }
        }
    }
    report(2, "Bezier algebra", ok, &format!("10^4 segments, worst derivative error {worst:.2e} relative"));
    assert!(ok);
}

// ---------------------------------------------------------------- scenes

fn random_scene(rng: &mut ChaCha8Rng, agents: usize) -> Scene {
    let lanes = LaneModel::straight(4, 4.0, 5000.0, 20.0);
    let ego_lane = rng.random_range(0..4);
    let mut st = FrenetState::new(200.0, 4.0 * ego_lane as f64 + rng.random_range(-0.4..0.4), rng.random_range(4.0..20.0));
    st.v_d = rng.random_range(-0.3..0.3);
    st.a_s = rng.random_range(-1.5..1.5);
    let ego = EgoVehicle { state: st, length: 5.0, width: 2.0 };
    let mut list: Vec<Agent> = Vec::new();
    while list.len() < agents {
        let lane = rng.random_range(0..4);
        let s: f64 = 200.0 + rng.random_range(-90.0..95.0);
        let d = 4.0 * lane as f64 + rng.random_range(-0.5..0.5);
        if (s - 200.0).abs() < 14.0 && lane == ego_lane {
            continue;
        }
        if list.iter().any(|a| (a.state.s - s).abs() < 8.0 && (a.state.d - d).abs() < 2.5) {
            continue;
        }
        list.push(Agent::new(list.len() as u64, FrenetState::new(s, d, rng.random_range(6.0..18.0)), 5.0, 2.0));
    }
    Scene::new(lanes, ego, list, 0.0).unwrap()
}

// ---------------------------------------------------------------- 3. free ranges

/// Reach window by explicit time stepping of full braking and full throttle.
fn reach_by_integration(ego: &FrenetState, lt: f64, ut: f64, lim: &KinodynamicLimits) -> (f64, f64) {
    let h = 1e-4;
    let run = |a: f64, horizon: f64| {
        let (mut s, mut v) = (ego.s, ego.v_s.max(0.0));
        let steps = (horizon / h).round() as usize;
        for _ in 0..steps {
            let v_next = (v + a * h).clamp(0.0, lim.v_s.max.max(v));
            s += 0.5 * (v + v_next) * h;
            v = v_next;
        }
        s
    };
    (run(lim.a_s.min, lt), run(lim.a_s.max, ut))
}

/// Free ranges from a 0.01 m occupancy grid over the reach window.
fn grid_free_ranges(
    scene: &Scene,
    lane: LaneLabel,
    lt: f64,
    ut: f64,
    lim: &KinodynamicLimits,
    per: &PerceptionParams,
    cor: &CorridorParams,
) -> Vec<(f64, f64)> {
    const CELL: f64 = 0.01;
    let (r0, r1) = reach_by_integration(&scene.ego.state, lt, ut, lim);
    let k = scene.lane_of(lane).unwrap() as f64;
    let (band_lo, band_hi) = (4.0 * k - 2.0 - per.straddle_margin, 4.0 * k + 2.0 + per.straddle_margin);
    let members: Vec<&Agent> = scene
        .agents
        .iter()
        .filter(|a| a.state.d >= band_lo && a.state.d <= band_hi)
        .filter(|a| (a.state.s - scene.ego.state.s).abs() <= per.sensing_range)
        .collect();
    let cells = ((r1 - r0) / CELL).ceil() as usize;
    let time_steps = ((ut - lt) / 0.005).ceil() as usize;
    let mut free = vec![true; cells];
    for a in members {
        let half = 0.5 * a.length + per.occupancy_margin + 0.5 * scene.ego.length;
        for j in 0..=time_steps {
            let t = lt + (ut - lt) * j as f64 / time_steps as f64;
            let c = a.state.s + a.state.v_s * t;
            let i0 = (((c - half - r0) / CELL).floor().max(0.0)) as usize;
            let i1 = (((c + half - r0) / CELL).ceil().max(0.0) as usize).min(cells);
            for f in free.iter_mut().take(i1).skip(i0) {
                *f = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < cells {
        if free[i] {
            let j = (i..cells).find(|&j| !free[j]).unwrap_or(cells);
            out.push((r0 + i as f64 * CELL, (r0 + j as f64 * CELL).min(r1)));
            i = j;
        } else {
            i += 1;
        }
    }
    let min_len = (scene.ego.length + cor.min_range_extra).min(0.5 * (r1 - r0));
    out.retain(|(a, b)| b - a >= min_len);
    if out.len() > cor.max_voxels_per_cell {
        out.sort_by(|x, y| (y.1 - y.0).total_cmp(&(x.1 - x.0)));
        out.truncate(cor.max_voxels_per_cell);
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
    }
    out
}

#[test]
fn criterion_03_free_ranges_match_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = PlannerConfig::default();
    let part = make_partition(cfg.horizon, cfg.segments, cfg.growth).unwrap();
    let tol = 0.03;
    let (mut compared, mut mismatches) = (0, Vec::new());
    for case in 0..200 {
        let n_agents = rng.random_range(0..=14);
        let scene = random_scene(&mut rng, n_agents);
        for lane in [LaneLabel::Current, LaneLabel::Left, LaneLabel::Right] {
            if !scene.has_lane(lane) {
                continue;
            }
            for seg in 0..part.len() {
                let (lt, ut) = part.bounds(seg);
                let got = free_ranges(lane, seg, &scene, &part, &cfg.limits, &cfg.perception, &cfg.corridor).unwrap();
                let want = grid_free_ranges(&scene, lane, lt, ut, &cfg.limits, &cfg.perception, &cfg.corridor);
                compared += 1;
                // ranges within a cell or two of the min-length cut may legitimately differ
                let min_len = scene.ego.length + cfg.corridor.min_range_extra;
                let strip = |v: &[(f64, f64)]| -> Vec<(f64, f64)> {
                    v.iter().copied().filter(|(a, b)| (b - a - min_len).abs() > tol).collect()
                };
                let (g, w) = (strip(&got), strip(&want));
                let same = g.len() == w.len()
                    && g.iter().zip(&w).all(|(x, y)| (x.0 - y.0).abs() <= tol && (x.1 - y.1).abs() <= tol);
                if !same {
                    mismatches.push((case, lane, seg, got, want));
                }
            }
        }
    }
    let pass = mismatches.is_empty();
    report(3, "free_ranges grid oracle", pass, &format!("200 scenes, {compared} lane/segment cells, 0.01 m grid"));
    assert!(pass, "{} mismatches, first: {:?}", mismatches.len(), mismatches.first());
}

// ---------------------------------------------------------------- 4. DFS

fn random_graph(rng: &mut ChaCha8Rng) -> VoxelGraph {
    let n_layers = rng.random_range(1..=5);
    let labels = [LaneLabel::Current, LaneLabel::Left, LaneLabel::Right];
    let mut layers: Vec<Vec<VoxelNode>> = Vec::new();
    for layer in 0..n_layers {
        let width = rng.random_range(1..=5);
        let nodes = (0..width)
            .map(|_| {
                let ls = rng.random_range(0..20) as f64;
                let voxel = Voxel {
                    ls,
                    us: ls + rng.random_range(1..6) as f64,
                    ld: -1.0,
                    ud: 1.0,
                    lt: layer as f64,
                    ut: layer as f64 + 1.0,
                    lane: labels[rng.random_range(0..3)],
                };
                let parents = if layer == 0 {
                    Vec::new()
                } else {
                    let prev = layers[layer - 1].len();
                    let picked: Vec<usize> = (0..prev).filter(|_| rng.random_bool(0.6)).collect();
                    picked
                        .into_iter()
                        .map(|parent| ParentEdge {
                            parent,
                            cost: rng.random_range(0..5) as f64 * 0.25,
                            s_overlap: rng.random_range(1..4) as f64,
                        })
                        .collect()
                };
                VoxelNode { voxel, layer, parents }
            })
            .collect();
        layers.push(nodes);
    }
    VoxelGraph { layers, origin: None }
}

struct Enumerated {
    nodes: Vec<usize>,
    total: f64,
    overlaps: Vec<f64>,
    final_us: f64,
    /// Other paths ranked equal to this one.
    ties: usize,
}

/// Every root-to-leaf path, built leaf-first.
fn all_paths(g: &VoxelGraph, layer: usize, idx: usize, out: &mut Vec<(Vec<usize>, Vec<f64>, Vec<f64>)>) {
    if layer == 0 {
        out.push((vec![idx], Vec::new(), Vec::new()));
        return;
    }
    for e in &g.layers[layer][idx].parents {
        let mut sub = Vec::new();
        all_paths(g, layer - 1, e.parent, &mut sub);
        for (mut nodes, mut costs, mut ov) in sub {
            nodes.push(idx);
            costs.push(e.cost);
            ov.push(e.s_overlap);
            out.push((nodes, costs, ov));
        }
    }
}

fn exhaustive_best(g: &VoxelGraph, behavior: Behavior) -> Option<Enumerated> {
    let last = g.layers.len() - 1;
    let mut best: Option<Enumerated> = None;
    for (j, node) in g.layers[last].iter().enumerate() {
        if node.voxel.lane != behavior.target_lane() {
            continue;
        }
        let mut paths = Vec::new();
        all_paths(g, last, j, &mut paths);
        for (nodes, costs, overlaps) in paths {
            let cand = Enumerated { nodes, total: costs.iter().fold(0.0, |a, c| a + c), overlaps, final_us: node.voxel.us, ties: 0 };
            let order = best.as_ref().map(|b| {
                compare_paths(cand.total, cand.final_us, &cand.overlaps, b.total, b.final_us, &b.overlaps)
            });
            match order {
                None | Some(Ordering::Less) => best = Some(cand),
                Some(Ordering::Equal) => best.as_mut().unwrap().ties += 1,
                Some(Ordering::Greater) => {}
            }
        }
    }
    best
}

#[test]
fn criterion_04_dfs_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut found, mut ok) = (0, true);
    for _ in 0..100 {
        let g = random_graph(&mut rng);
        for b in Behavior::ALL {
            match (search(&g, b), exhaustive_best(&g, b)) {
                (Ok(p), Some(e)) => {
                    found += 1;
                    let last = g.layers.len() - 1;
                    let us = g.layers[last][p.nodes[last].1].voxel.us;
                    let overlaps: Vec<f64> =
                        (1..=last).map(|i| g.layers[i][p.nodes[i].1].parents.iter().find(|x| x.parent == p.nodes[i - 1].1).unwrap().s_overlap).collect();
                    ok &= p.total_cost == e.total
                        && compare_paths(p.total_cost, us, &overlaps, e.total, e.final_us, &e.overlaps) == Ordering::Equal;
                    if e.ties == 0 {
                        ok &= p.nodes.iter().map(|n| n.1).collect::<Vec<_>>() == e.nodes;
                    }
                }
                (Err(_), None) => {}
                _ => ok = false,
            }
        }
    }
    report(4, "graph search oracle", ok, &format!("100 graphs <= 5x5, {found} feasible searches"));
    assert!(ok);
}

// ---------------------------------------------------------------- 5. trajectories

#[test]
fn criterion_05_trajectory_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = PlannerConfig::default();
    let lim = cfg.limits;
    let step = 0.02;
    let (mut checked, mut problems) = (0, Vec::new());
    for case in 0..150 {
        let n_agents = rng.random_range(0..=12);
        let scene = random_scene(&mut rng, n_agents);
        let ep = match plan_episode(&scene, &cfg) {
            Ok(ep) => ep,
            Err(PlannerError::AllBehaviorsFailed { episode, .. }) => *episode,
            Err(e) => panic!("{e}"),
        };
        for o in &ep.outcomes {
            let Ok(c) = &o.result else { continue };
            checked += 1;
            let tr = &c.trajectory;
            let e = &scene.ego.state;
            let mut bad = |what: String| problems.push((case, o.behavior, what));
            let init = [
                (tr.eval(0.0, Axis::S, 0), e.s),
                (tr.eval(0.0, Axis::D, 0), e.d),
                (tr.eval(0.0, Axis::S, 1), lim.v_s.clamp(e.v_s)),
                (tr.eval(0.0, Axis::D, 1), lim.v_d.clamp(e.v_d)),
                (tr.eval(0.0, Axis::S, 2), lim.a_s.clamp(e.a_s)),
                (tr.eval(0.0, Axis::D, 2), lim.a_d.clamp(e.a_d)),
            ];
            for (k, (got, want)) in init.iter().enumerate() {
                if (got - want).abs() > 1e-6 {
                    bad(format!("initial state {k}: {got} vs {want}"));
                }
            }
            for w in tr.segments.windows(2) {
                for axis in [Axis::S, Axis::D] {
                    for order in 0..=2 {
                        let a = w[0].evaluate(w[0].ut, axis, order).unwrap();
                        let b = w[1].evaluate(w[1].lt, axis, order).unwrap();
                        if (a - b).abs() > 1e-6 {
                            bad(format!("C2 gap {axis:?}/{order} at {}: {}", w[0].ut, (a - b).abs()));
                        }
                    }
                }
            }
            for (seg, v) in tr.segments.iter().zip(&c.sequence) {
                let n = ((seg.ut - seg.lt) / step).ceil() as usize;
                for k in 0..=n {
                    let t = (seg.lt + k as f64 * step).min(seg.ut);
                    let s = seg.evaluate(t, Axis::S, 0).unwrap();
                    let d = seg.evaluate(t, Axis::D, 0).unwrap();
                    if s < v.ls - 1e-6 || s > v.us + 1e-6 || d < v.ld - 1e-6 || d > v.ud + 1e-6 {
                        bad(format!("outside voxel at t={t}: ({s}, {d})"));
                    }
                    for axis in [Axis::S, Axis::D] {
                        let a = seg.evaluate(t, axis, 2).unwrap();
                        let j = seg.evaluate(t, axis, 3).unwrap();
                        if a.abs() > 2.0 + 1e-6 || j.abs() > 2.0 + 1e-6 {
                            bad(format!("{axis:?} a={a} jerk={j} at t={t}"));
                        }
                    }
                }
            }
        }
    }
    let pass = problems.is_empty() && checked > 150;
    report(5, "trajectory contract", pass, &format!("{checked} trajectories from 150 scenes, 0.02 s sampling"));
    assert!(checked > 150, "only {checked} trajectories");
    assert!(problems.is_empty(), "{} violations, first: {:?}", problems.len(), problems.first());
}

// ---------------------------------------------------------------- 6. endurance

#[test]
fn criterion_06_closed_loop_endurance() {
    let start = Instant::now();
    let scenario = Scenario::endurance(1);
    assert_eq!((scenario.lanes.count, scenario.speed_limits.agents, scenario.speed_limits.ego), (4, 15.0, 20.0));
    let r = run_closed_loop(&scenario, &PlannerConfig::default(), &SimConfig { duration: 480.0, ..SimConfig::default() });
    let secs = start.elapsed().as_secs_f64();
    let simulated = r.trace.frames.last().map_or(0.0, |f| f.t);
    let m = &r.metrics;
    let pass = m.collisions == 0
        && simulated >= 480.0 - 1e-6
        && m.efficiency >= 15.0
        && m.lane_changes >= 3
        && secs < 300.0;
    report(
        6,
        "closed-loop endurance",
        pass,
        &format!(
            "{simulated:.0} s simulated, {} collisions, avg v {:.2} m/s, {} lane changes, {} failed ticks, {secs:.1} s wall",
            m.collisions, m.efficiency, m.lane_changes, m.planning_failures
        ),
    );
    assert_eq!(m.collisions, 0, "{:?}", r.end);
    assert!(simulated >= 480.0 - 1e-6, "ended early: {:?}", r.end);
    assert!(m.efficiency >= 15.0);
    assert!(m.lane_changes >= 3);
    assert!(secs < 300.0);
}

// ---------------------------------------------------------------- 7. latency

#[test]
fn criterion_07_latency_with_twelve_agents() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = PlannerConfig::default();
    let scenes: Vec<Scene> = (0..200).map(|_| random_scene(&mut rng, 12)).collect();
    assert!(scenes.iter().all(|s| s.agents.len() == 12));
    let mut times = Vec::new();
    for scene in &scenes {
        let t = Instant::now();
        let r = plan_episode(scene, &cfg);
        times.push(t.elapsed().as_secs_f64() * 1e3);
        assert!(!matches!(r, Err(PlannerError::InvalidConfig(_))));
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let max = times.iter().copied().fold(0.0, f64::max);
    report(7, "planning latency", mean < 100.0, &format!("mean {mean:.2} ms, max {max:.2} ms over 200 episodes, 12 agents"));
    assert!(mean < 100.0);
}

// ---------------------------------------------------------------- 8. open loop

#[test]
fn criterion_08_open_loop_protocol() {
    let params = SyntheticParams::with_density(Density::Moderate);
    let cfg = OpenLoopConfig::default();
    let planner = PlannerConfig::default();
    let mut ok = true;
    let mut line = String::new();
    let mut lk_success = 0.0;
    for kind in [ReplayKind::LaneKeep, ReplayKind::LaneChange] {
        let runs = run_batch(&params, kind, 0..100, &cfg, &planner);
        let m = Metrics::aggregate(&runs);
        let by = |o: RunOutcome| runs.iter().filter(|r| r.outcome == o).count();
        ok &= runs.len() == 100;
        ok &= m.successes + m.failures + m.wrong_lane == 100;
        ok &= by(RunOutcome::Success) == m.successes && by(RunOutcome::Failure) == m.failures;
        ok &= runs.iter().all(|r| (0.0..=1.0).contains(&r.risk)) && (0.0..=1.0).contains(&m.risk);
        ok &= m.success_rate + m.failure_rate <= 1.0 + 1e-12;
        if kind == ReplayKind::LaneKeep {
            lk_success = m.success_rate;
        }
        line.push_str(&format!("{} ", m.csv_row(&format!("{kind:?}"))));
    }
    let pass = ok && lk_success >= 0.8;
    report(8, "open-loop protocol", pass, line.trim_end());
    assert!(ok);
    assert!(lk_success >= 0.8, "lane-keep success {lk_success}");
}

// ---------------------------------------------------------------- 9. ablation

#[test]
fn criterion_09_ablation_directions() {
    let params = SyntheticParams::with_density(Density::Dense);
    let variants = [Variant::Default, Variant::FixedCount, Variant::UniformDt, Variant::JerkOnly];
    let table = open_loop_ablation(
        &variants,
        &params,
        &[ReplayKind::LaneKeep],
        0..50,
        &OpenLoopConfig::default(),
        &PlannerConfig::default(),
    );
    let m = |v| table.get(v).unwrap();
    let (def, fixed, uni, jerk) = (m(Variant::Default), m(Variant::FixedCount), m(Variant::UniformDt), m(Variant::JerkOnly));
    let a = def.failure_rate <= fixed.failure_rate;
    let b = uni.failure_rate >= def.failure_rate;
    let c = jerk.efficiency < def.efficiency;
    report(
        9,
        "ablation directions",
        a && b && c,
        &format!(
            "fail default {:.2} / fixed-count {:.2} / uniform-dt {:.2}; efficiency jerk-only {:.2} vs full {:.2}",
            def.failure_rate, fixed.failure_rate, uni.failure_rate, jerk.efficiency, def.efficiency
        ),
    );
    assert!(a && b && c, "\n{}", table.to_csv());
}

// ---------------------------------------------------------------- 10. determinism

#[test]
fn criterion_10_metrics_json_is_reproducible() {
    let planner = PlannerConfig::default();
    let sim = SimConfig { duration: 10.0, ..SimConfig::default() };
    let closed = || serde_json::to_string_pretty(&run_closed_loop(&Scenario::endurance(3), &planner, &sim).metrics).unwrap();
    let params = SyntheticParams::with_density(Density::Moderate);
    let open = || {
        let runs = run_batch(&params, ReplayKind::LaneChange, 0..8, &OpenLoopConfig::default(), &planner);
        serde_json::to_string_pretty(&Metrics::aggregate(&runs)).unwrap()
    };
    let ablate = || {
        let t = open_loop_ablation(&Variant::ALL, &params, &[ReplayKind::LaneKeep], 0..3, &OpenLoopConfig::default(), &planner);
        serde_json::to_string_pretty(&t).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scene = random_scene(&mut rng, 10);
    let plan = || {
        let ep = plan_episode(&scene, &planner).unwrap();
        let costs: Vec<_> = ep.outcomes.iter().map(|o| (o.behavior, o.result.as_ref().ok().map(|c| c.cost))).collect();
        serde_json::to_string(&(ep.selected, costs, &ep.graph)).unwrap()
    };
    let same = [closed() == closed(), open() == open(), ablate() == ablate(), plan() == plan()];
    let pass = same.iter().all(|x| *x);
    report(10, "determinism", pass, "sim, replay, ablate and plan outputs serialized twice (CLI binary covered in the cli crate tests)");
    assert!(pass, "{same:?}");
}
