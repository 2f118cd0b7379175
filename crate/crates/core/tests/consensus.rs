mod support;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use swarm_dmpc::consensus::{
    dual_update, edge_update, node_update, AdmmConfig, AgentProblem, ConsensusEngine, CycleOutput, InteractionGraph,
    Payload, RecordingTransport, Transport,
};
use swarm_dmpc::dynamics::{bezier_reference, AgentState};
use swarm_dmpc::planner::{
    build_local_qp, reference_inputs, EdgeSet, OperatingPoint, PlannerConfig,
};
use swarm_dmpc::qp::{solve, CsrMatrix, QpProblem, QpSettings};
use swarm_dmpc::safety::{AffineRow, Obstacle, Sense};
use support::oracle::{solve_by_enumeration, DenseQp};

fn settings() -> QpSettings<f64> {
    QpSettings { eps_abs: 1e-8, eps_rel: 1e-8, max_iter: 4000, ..QpSettings::default() }
}

fn cfg(n: usize) -> PlannerConfig<f64> {
    PlannerConfig { horizon: n, ..PlannerConfig::default() }
}

fn problem(x0: AgentState<f64>, goal: AgentState<f64>, obstacles: &[Obstacle<f64>], c: &PlannerConfig<f64>) -> AgentProblem<f64> {
    let reference = bezier_reference(&x0, &goal, c.horizon).unwrap();
    let op = OperatingPoint::from_inputs(x0, reference_inputs(&reference, c.ts, &c.bounds), c.ts).unwrap();
    let local = build_local_qp(&op, &reference, obstacles, c).unwrap();
    AgentProblem { op, local }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn node_update_averages_target_and_consensus_point() {
    let a = [1.0, -2.0, 0.5];
    let b = [3.0, 4.0, -1.5];
    // ‖x − a‖² = ½xᵀ(2I)x − 2aᵀx + const.
    let h = CsrMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, 2.0), (2, 2, 2.0)]);
    let local = QpProblem::new(h, a.iter().map(|v| -2.0 * v).collect()).unwrap();
    let lambda = [0.0; 3];
    let sol = node_update(&local, &[(&b, &lambda)], 2.0, &settings()).unwrap();
    for k in 0..3 {
        assert!((sol.x[k] - 0.5 * (a[k] + b[k])).abs() < 1e-8, "{:?}", sol.x);
    }
}

#[test]
fn node_update_without_neighbors_is_the_local_solve() {
    let c = cfg(8);
    let p = problem(AgentState::new(0.0, 0.0, 0.0), AgentState::new(1.5, 0.5, 0.0), &[Obstacle::new(0.8, 0.6)], &c);
    let direct = solve(&p.local.problem, &settings()).unwrap();
    let via = node_update(&p.local.problem, &[], 20.0, &settings()).unwrap();
    assert!(max_abs_diff(&direct.x, &via.x) < 1e-12);
}

#[test]
fn node_update_keeps_a_consensus_fixed_point() {
    let c = cfg(8);
    let p = problem(AgentState::new(0.0, 0.0, 0.3), AgentState::new(1.0, 1.0, 1.0), &[Obstacle::new(1.0, -0.2)], &c);
    let star = solve(&p.local.problem, &settings()).unwrap();
    assert!(star.is_solved(), "{:?}", star.status);
    let star = star.x;
    let zero = vec![0.0; star.len()];
    let sol = node_update(&p.local.problem, &[(&star, &zero), (&star, &zero)], 20.0, &settings()).unwrap();
    assert!(sol.is_solved(), "{:?}", sol.status);
    assert!(max_abs_diff(&star, &sol.x) < 1e-6, "{}", max_abs_diff(&star, &sol.x));
}

/// Single-row edge over scalar `ξ`: `a_i z_i + a_j z_j ≥ rhs`.
fn scalar_edge(a_i: f64, a_j: f64, rhs: f64) -> EdgeSet<f64> {
    let mut coeffs = Vec::new();
    if a_i != 0.0 {
        coeffs.push((0, a_i));
    }
    if a_j != 0.0 {
        coeffs.push((1, a_j));
    }
    EdgeSet { rows: vec![AffineRow { coeffs, rhs, sense: Sense::Ge, degenerate: false }], slack_dim: 1, xi_dim: 1 }
}

fn edge_oracle(set: &EdgeSet<f64>, phi: f64, rho: f64, v_i: f64, v_j: f64) -> DVector<f64> {
    let row = &set.rows[0];
    let mut a_eq = DMatrix::zeros(1, 3);
    for (c, v) in &row.coeffs {
        a_eq[(0, *c)] = *v;
    }
    a_eq[(0, 2)] = -1.0;
    let qp = DenseQp {
        h: DMatrix::from_diagonal(&DVector::from_vec(vec![rho, rho, 2.0 * phi])),
        f: DVector::from_vec(vec![-rho * v_i, -rho * v_j, 0.0]),
        a_eq,
        b_eq: DVector::from_vec(vec![row.rhs]),
        a_in: DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        b_in: DVector::from_vec(vec![0.0]),
    };
    solve_by_enumeration(&qp, 1e-10).unwrap().x
}

#[test]
fn edge_update_passes_safe_points_through() {
    // z_i − z_j ≥ 0.5 already holds with margin 1.5 at the targets.
    let set = scalar_edge(1.0, -1.0, 0.5);
    let (xi, xj, li, lj) = ([1.2], [-0.5], [0.1], [-0.1]);
    let (z_i, z_j, s) = edge_update(&set, &xi, &xj, &li, &lj, 0.0, 20.0, &settings()).unwrap();
    assert!((z_i[0] - 1.3).abs() < 1e-8 && (z_j[0] + 0.6).abs() < 1e-8);
    assert!((s[0] - (1.3 + 0.6 - 0.5)).abs() < 1e-8);
    // With a slack penalty the point moves; the oracle decides how far.
    let (z_i, z_j, s) = edge_update(&set, &xi, &xj, &li, &lj, 5.0, 20.0, &settings()).unwrap();
    let o = edge_oracle(&set, 5.0, 20.0, 1.3, -0.6);
    assert!((z_i[0] - o[0]).abs() < 1e-7 && (z_j[0] - o[1]).abs() < 1e-7 && (s[0] - o[2]).abs() < 1e-7);
}

#[test]
fn edge_update_one_dimensional_toy_matches_oracle() {
    // ψ(z) = z − 1 ≤ 0, i.e. −z ≥ −1 with slack s = 1 − z.
    let set = scalar_edge(-1.0, 0.0, -1.0);
    let (z_i, z_j, s) = edge_update(&set, &[2.0], &[0.0], &[0.0], &[0.0], 5.0, 2.0, &settings()).unwrap();
    let o = edge_oracle(&set, 5.0, 2.0, 2.0, 0.0);
    // Minimizer of 5(1−z)² + (z−2)² is 7/6 > 1, so the slack bound is active.
    assert!((o[0] - 1.0).abs() < 1e-12 && o[2].abs() < 1e-12);
    assert!((z_i[0] - o[0]).abs() < 1e-7 && (z_j[0] - o[1]).abs() < 1e-7 && (s[0] - o[2]).abs() < 1e-7);
}

#[test]
fn edge_update_is_symmetric_in_labels() {
    let set = scalar_edge(1.0, -2.0, 0.7);
    let swapped = scalar_edge(-2.0, 1.0, 0.7);
    let a = edge_update(&set, &[0.3], &[0.4], &[0.05], &[-0.02], 5.0, 20.0, &settings()).unwrap();
    let b = edge_update(&swapped, &[0.4], &[0.3], &[-0.02], &[0.05], 5.0, 20.0, &settings()).unwrap();
    assert!((a.0[0] - b.1[0]).abs() < 1e-9 && (a.1[0] - b.0[0]).abs() < 1e-9 && (a.2[0] - b.2[0]).abs() < 1e-9);
}

#[test]
fn dual_update_examples() {
    assert!((dual_update(&[0.0f64], &[1.0], &[0.8])[0] - 0.2).abs() < 1e-15);
    assert_eq!(dual_update(&[0.3, -1.0], &[2.0, 5.0], &[2.0, 5.0]), vec![0.3, -1.0]);
    let once = dual_update(&[0.1f64], &[1.5], &[1.0]);
    let twice = dual_update(&once, &[1.5], &[1.0]);
    assert!((twice[0] - (0.1 + 2.0 * 0.5)).abs() < 1e-15);
}

fn engine(graph: InteractionGraph, c: &PlannerConfig<f64>) -> ConsensusEngine<f64> {
    ConsensusEngine::new(graph, AdmmConfig::default(), c.clone(), QpSettings::default()).unwrap()
}

#[test]
fn single_agent_cycle_is_one_local_solve() {
    let c = cfg(20);
    let p = problem(AgentState::new(0.0, 0.0, 0.0), AgentState::new(2.0, 1.0, 0.5), &[], &c);
    let direct = solve(&p.local.problem, &QpSettings::default()).unwrap();
    let out = engine(InteractionGraph::complete(1), &c).run_cycle(vec![p], 0).unwrap();
    assert!(out.residuals.is_empty());
    assert_eq!(out.iterations, 1);
    assert_eq!(out.node_qps, vec![1]);
    assert!(max_abs_diff(&direct.x, &out.plans[0]) < 1e-9);
}

fn far_apart(c: &PlannerConfig<f64>) -> Vec<AgentProblem<f64>> {
    vec![
        problem(AgentState::new(0.0, 0.0, 0.0), AgentState::new(3.0, 0.0, 0.0), &[], c),
        problem(AgentState::new(0.0, 10.0, 0.0), AgentState::new(3.0, 10.5, 0.0), &[], c),
    ]
}

#[test]
fn far_apart_agents_match_decoupled_solves() {
    let c = cfg(30);
    let probs = far_apart(&c);
    let decoupled: Vec<_> = probs.iter().map(|p| solve(&p.local.problem, &settings()).unwrap().x).collect();
    let out = ConsensusEngine::new(InteractionGraph::complete(2), AdmmConfig::default(), c.clone(), settings())
        .unwrap()
        .run_cycle(probs, 0)
        .unwrap();
    assert_eq!(out.iterations, 15);
    for i in 0..2 {
        let d = max_abs_diff(&decoupled[i], &out.plans[i]);
        assert!(d < 1e-4, "agent {i} deviates by {d}");
    }
    let last = out.residuals.last().unwrap();
    assert!(last.primal <= 1e-3, "{last:?}");
}

fn check_slack_and_rows(out: &CycleOutput<f64>) {
    for (e, (state, set)) in out.edge_states.iter().zip(&out.edge_sets).enumerate() {
        assert!(state.s.iter().all(|s| *s >= -1e-8), "edge {e} slack {:?}", state.s);
        for (m, s) in set.margins(&state.z_i, &state.z_j).iter().zip(&state.s) {
            assert!((m - s).abs() < 1e-5, "edge {e}: margin {m} vs slack {s}");
        }
    }
}

#[test]
fn head_on_plans_respect_linearized_rows_up_to_slack() {
    let c = cfg(30);
    let probs = vec![
        problem(AgentState::new(-1.0, 0.0, 0.0), AgentState::new(1.0, 0.0, 0.0), &[], &c),
        problem(AgentState::new(1.0, 0.0, std::f64::consts::PI), AgentState::new(-1.0, 0.0, std::f64::consts::PI), &[], &c),
    ];
    let out = engine(InteractionGraph::complete(2), &c).run_cycle(probs, 0).unwrap();
    check_slack_and_rows(&out);
    let set = &out.edge_sets[0];
    let state = &out.edge_states[0];
    let primal = out.residuals.last().unwrap().primal;
    // The plans sit within the primal residual of the edge copies.
    for (row, m) in set.rows.iter().zip(set.margins(&out.plans[0], &out.plans[1])) {
        let l1: f64 = row.coeffs.iter().map(|(_, v)| v.abs()).sum();
        assert!(m >= -(l1 * primal + 1e-6), "row margin {m}, primal {primal}");
    }
    // Every row is met, so no positive slack is needed beyond the margin.
    assert!(state.s.iter().all(|s| *s >= -1e-8));
}

fn four_agents(c: &PlannerConfig<f64>) -> Vec<AgentProblem<f64>> {
    vec![
        problem(AgentState::new(-1.5, 0.0, 0.0), AgentState::new(1.5, 0.0, 0.0), &[], c),
        problem(AgentState::new(1.5, 0.1, 3.1), AgentState::new(-1.5, 0.1, 3.1), &[], c),
        problem(AgentState::new(0.0, -1.5, 1.57), AgentState::new(0.0, 1.5, 1.57), &[], c),
        problem(AgentState::new(0.1, 1.5, -1.57), AgentState::new(0.1, -1.5, -1.57), &[], c),
    ]
}

#[test]
fn four_agents_solve_four_node_and_six_edge_qps_per_iteration() {
    let c = cfg(20);
    let out = engine(InteractionGraph::complete(4), &c).run_cycle(four_agents(&c), 0).unwrap();
    assert_eq!(out.iterations, 15);
    assert_eq!(out.node_qps, vec![4; 15]);
    assert_eq!(out.edge_qps, vec![6; 15]);
    assert_eq!(out.timings.node.len(), 15);
    assert!(out.timings.node.iter().all(|v| v.len() == 4));
    assert!(out.timings.edge.iter().all(|v| v.len() == 6));
    assert!(out.timings.critical_path() <= out.timings.sequential() + 1e-12);
    check_slack_and_rows(&out);
}

#[test]
fn messages_only_travel_along_graph_edges() {
    let c = cfg(15);
    // Path graph 0 – 1 – 2: agents 0 and 2 never talk.
    let graph = InteractionGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let spy = Arc::new(RecordingTransport::new(graph.clone(), false));
    let transport: Arc<dyn Transport<f64>> = spy.clone();
    let mut eng = ConsensusEngine::with_transport(graph.clone(), AdmmConfig::default(), c.clone(), QpSettings::default(), transport).unwrap();
    let probs = four_agents(&c).into_iter().take(3).collect();
    eng.run_cycle(probs, 0).unwrap();
    let records = spy.records();
    assert!(!records.is_empty());
    assert!(records.iter().all(|m| graph.are_neighbors(m.from, m.to)));
    // Per edge: one share at setup, then one share and one result per iteration.
    for &(i, j) in graph.edges() {
        let between: Vec<_> = records.iter().filter(|m| (m.from, m.to) == (j, i) || (m.from, m.to) == (i, j)).collect();
        assert_eq!(between.len(), 1 + 2 * 15);
        let results = between.iter().filter(|m| matches!(m.payload, Payload::EdgeResult { .. })).count();
        assert_eq!(results, 15);
    }
    // Direct sends between non-neighbors are refused.
    let bad = swarm_dmpc::consensus::Message {
        from: 0,
        to: 2,
        cycle: 0,
        iteration: 1,
        payload: Payload::EdgeResult { z_i: vec![], z_j: vec![], s: vec![] },
    };
    assert!(spy.send(bad).is_err());
}

fn run_two_cycles(transport: Option<Arc<dyn Transport<f64>>>) -> Vec<Vec<f64>> {
    let c = cfg(20);
    let graph = InteractionGraph::complete(4);
    let mut eng = match transport {
        Some(t) => ConsensusEngine::with_transport(graph, AdmmConfig::default(), c.clone(), QpSettings::default(), t).unwrap(),
        None => engine(graph, &c),
    };
    let mut plans = eng.run_cycle(four_agents(&c), 0).unwrap().plans;
    plans.extend(eng.run_cycle(four_agents(&c), 1).unwrap().plans);
    plans
}

#[test]
fn codec_round_trip_does_not_change_results() {
    let graph = InteractionGraph::complete(4);
    let plain = run_two_cycles(None);
    let coded = run_two_cycles(Some(Arc::new(RecordingTransport::new(graph, true))));
    assert_eq!(plain, coded);
}

#[test]
fn results_are_bitwise_reproducible_across_thread_counts() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_two_cycles(None));
    let b = four.install(|| run_two_cycles(None));
    let c = run_two_cycles(None);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn reset_duals_flag_and_residual_stop() {
    let c = cfg(20);
    let cfg_stop = AdmmConfig { residual_stop: Some((1e-3, 1e-3)), reset_duals_each_cycle: true, ..AdmmConfig::default() };
    let mut eng = ConsensusEngine::new(InteractionGraph::complete(2), cfg_stop, c.clone(), settings()).unwrap();
    let out = eng.run_cycle(far_apart(&c), 0).unwrap();
    assert!(out.iterations < 15, "far-apart agents should stop early, took {}", out.iterations);
    let last = out.residuals.last().unwrap();
    assert!(last.primal <= 1e-3 && last.dual <= 1e-3);
    let again = eng.run_cycle(far_apart(&c), 1).unwrap();
    assert!(again.edge_states[0].lambda_i.iter().all(|v| v.is_finite()));
    assert!(AdmmConfig { rho: 0.0, ..AdmmConfig::default() }.validate().is_err());
    assert!(AdmmConfig { max_iter: 0, ..AdmmConfig::default() }.validate().is_err());
}
