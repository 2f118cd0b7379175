use std::path::{Path, PathBuf};

use swarm_dmpc::dynamics::{bezier_reference, bezier_reference_paced, AgentState, AgentTrajectory};
use swarm_dmpc::harness::{
    apply_override, compare, parse_override, read_jsonl, run, trajectory_csv, write_jsonl, ComparisonReport,
    Scenario, SolverKind,
};
use swarm_dmpc::planner::OperatingPoint;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn load(name: &str, overrides: &[(&str, &str)]) -> Scenario {
    let ov: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    Scenario::load(&scenario_path(name), &ov).unwrap()
}

const MINIMAL: &str = r#"{"name": "mini", "agents": [{"start": [0, 0, 0], "goal": [1, 0, 0]}]}"#;

#[test]
fn shipped_scenarios_validate() {
    for name in ["two_agent_swap", "four_agent_cross", "push_recovery", "rough_field_10obs"] {
        let sc = load(name, &[]);
        assert_eq!(sc.name, name);
        assert!(sc.problems().is_empty(), "{name}: {:?}", sc.problems());
    }
}

#[test]
fn minimal_scenario_takes_defaults() {
    let sc = Scenario::from_json_str(MINIMAL).unwrap();
    assert_eq!(sc.horizon, 50);
    assert_eq!(sc.solver, SolverKind::Distributed);
    assert_eq!(sc.admm.max_iter, 15);
    assert_eq!(sc.admm.rho, 20.0);
    assert_eq!(sc.reference_speed, Some(0.5));
    assert!(!sc.qp.polish);
}

#[test]
fn validation_lists_every_problem() {
    let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
    v["agents"] = serde_json::json!([
        {"start": [0, 0, 0], "goal": [1, 0, 0]},
        {"start": [0.1, 0, 0], "goal": [2, 0, 0]}
    ]);
    v["obstacles"] = serde_json::json!([[0.0, 0.2]]);
    v["disturbances"] = serde_json::json!([{"agent": 5, "start_cycle": 4, "end_cycle": 2, "delta": [0, 0, 0]}]);
    v["duration"] = serde_json::json!(0);
    v["reference_speed"] = serde_json::json!(-1.0);
    let sc = Scenario::from_value(v).unwrap();
    let problems = sc.problems().join("\n");
    for needle in [
        "duration",
        "reference_speed",
        "disturbances.0: agent 5",
        "start_cycle after end_cycle",
        "agents 0 and 1 start",
        "from obstacle 0",
    ] {
        assert!(problems.contains(needle), "missing '{needle}' in:\n{problems}");
    }
    assert!(sc.validate().is_err());
}

#[test]
fn unknown_fields_are_rejected() {
    let text = MINIMAL.replace("\"name\"", "\"colour\": 1, \"name\"");
    let err = Scenario::from_json_str(&text).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn overrides_reach_nested_and_indexed_fields() {
    let sc = load(
        "two_agent_swap",
        &[("admm.rho", "35"), ("agents.1.goal.0", "-1.5"), ("solver", "centralized"), ("qp.polish", "true")],
    );
    assert_eq!(sc.admm.rho, 35.0);
    assert_eq!(sc.agents[1].goal[0], -1.5);
    assert_eq!(sc.solver, SolverKind::Centralized);
    assert!(sc.qp.polish);

    let mut v = serde_json::json!({"a": [1, 2]});
    assert!(apply_override(&mut v, "a.7", "0").unwrap_err().to_string().contains("out of range"));
    assert!(apply_override(&mut v, "a..b", "0").is_err());
    assert!(apply_override(&mut v, "a.0.x", "0").unwrap_err().to_string().contains("scalar"));
    assert_eq!(parse_override(" admm.rho = 5 ").unwrap(), ("admm.rho".to_string(), "5".to_string()));
    assert!(parse_override("rho").is_err());
    assert!(parse_override("=3").is_err());
}

#[test]
fn override_that_breaks_the_scenario_fails_to_load() {
    let ov = vec![("safety.d_th".to_string(), "-1".to_string())];
    assert!(Scenario::load(&scenario_path("two_agent_swap"), &ov).is_err());
}

#[test]
fn random_obstacles_follow_the_seed() {
    let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
    v["random_obstacles"] = serde_json::json!({"count": 6, "x": [-3, 3], "y": [-3, 3], "clearance": 0.8});
    let with_seed = |seed: u64| {
        let mut v = v.clone();
        v["seed"] = seed.into();
        Scenario::from_value(v).unwrap().resolved_obstacles().unwrap()
    };
    let a = with_seed(3);
    assert_eq!(a.len(), 6);
    assert_eq!(a, with_seed(3));
    assert_ne!(a, with_seed(4));
    for (k, o) in a.iter().enumerate() {
        assert!(o.center[0].hypot(o.center[1]) >= 0.8);
        for p in &a[..k] {
            assert!((o.center[0] - p.center[0]).hypot(o.center[1] - p.center[1]) >= 0.8);
        }
    }

    v["random_obstacles"]["count"] = 500.into();
    assert!(Scenario::from_value(v).unwrap().resolved_obstacles().is_err());
}

#[test]
fn paced_reference_walks_at_the_requested_step() {
    let x0 = AgentState::new(0.0, 0.0, 0.0);
    let goal = AgentState::new(2.0, 0.0, 0.0);
    let r = bezier_reference_paced(&x0, &goal, 50, Some(0.05)).unwrap();
    assert_eq!(r.samples.len(), 51);
    for w in r.samples.windows(2).take(40) {
        assert!((w[1].px - w[0].px - 0.05f64).abs() < 1e-12);
    }
    assert!(r.samples[40..].iter().all(|s| s.distance_to(&goal) < 1e-12));

    // A long chord falls back to the uniform parameter step.
    let far = AgentState::new(10.0, 0.0, 0.0);
    let paced = bezier_reference_paced(&x0, &far, 50, Some(0.05)).unwrap();
    assert_eq!(paced, bezier_reference(&x0, &far, 50).unwrap());
    assert!(bezier_reference_paced(&x0, &goal, 50, Some(0.0)).is_err());
}

#[test]
fn intent_length_must_match_the_horizon() {
    let x0 = AgentState::new(0.0, 0.0, 0.0);
    let op = OperatingPoint::from_xi(x0, &AgentTrajectory::hold(x0, 4, 0).flatten()).unwrap();
    assert!(op.clone().with_intent(vec![[0.0, 0.0]; 3]).is_err());
    assert_eq!(op.clone().with_intent(vec![[1.0, 0.0]; 4]).unwrap().intent.len(), 4);
    assert!(op.with_intent(Vec::new()).unwrap().intent.is_empty());
}

#[test]
fn swap_is_safe_and_both_agents_arrive() {
    let out = run(&load("two_agent_swap", &[])).unwrap();
    let s = &out.summary;
    assert!(s.safety_ok);
    assert!(s.min_pair_distance.unwrap() >= 0.48, "{:?}", s.min_pair_distance);
    assert!(s.arrivals.iter().all(|a| a.is_some_and(|c| c <= 150)), "{:?}", s.arrivals);
    assert_eq!(out.logs.len(), 150);
    assert!(out.logs.iter().all(|l| l.admm_iterations == 15));
}

#[test]
fn push_is_recovered_within_ten_cycles() {
    let out = run(&load("push_recovery", &[])).unwrap();
    let p = &out.summary.pushes;
    assert_eq!(p.len(), 1);
    assert!(p[0].went_negative, "push should drive h below zero");
    assert!(p[0].recovery_cycles.is_some_and(|c| c <= 10), "{:?}", p[0]);
    assert!(out.summary.min_h_nominal.unwrap() >= -0.02);
}

#[test]
fn far_apart_agents_plan_identically_with_every_solver() {
    let mut sc = load("two_agent_swap", &[("duration", "25")]);
    sc.agents[1].start = [-2.0, 6.0, 0.0];
    sc.agents[1].goal = [2.0, 6.0, 0.0];
    sc.agents[0].start = [-2.0, 0.0, 0.0];
    sc.agents[0].goal = [2.0, 0.5, 0.0];
    let runs: Vec<_> = [SolverKind::Distributed, SolverKind::Centralized, SolverKind::Decoupled]
        .into_iter()
        .map(|solver| run(&Scenario { solver, ..sc.clone() }).unwrap())
        .collect();
    for other in &runs[1..] {
        for (a, b) in runs[0].logs.iter().zip(&other.logs) {
            for (p, q) in a.agents.iter().zip(&b.agents) {
                assert!(p.state.distance_to(&q.state) <= 1e-3, "cycle {}", a.cycle);
            }
        }
    }
}

#[test]
fn logs_round_trip_through_jsonl_and_csv() {
    let out = run(&load("push_recovery", &[("duration", "5")])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_jsonl(&path, &out.logs).unwrap();
    let back = read_jsonl(&path).unwrap();
    assert_eq!(back.len(), 5);
    for (a, b) in out.logs.iter().zip(&back) {
        assert_eq!(a.agents, b.agents);
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.closed_loop_cost, b.closed_loop_cost);
    }
    let csv = trajectory_csv(&out.logs);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "cycle,agent,px,py,theta,v,omega,h_obs,h_edge_min");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 9);
    assert_eq!(first[2].parse::<f64>().unwrap(), out.logs[0].agents[0].state.px);
    assert_eq!(csv.lines().count(), 1 + 5 * 2);
}

#[test]
fn comparison_report_is_consistent_and_serializes() {
    let (report, dist, cent) = compare(&load("two_agent_swap", &[("duration", "20")])).unwrap();
    assert_eq!(report.deviation_per_cycle.len(), 21);
    assert_eq!(report.node_qps_per_iteration, vec![2; 15]);
    assert_eq!(report.edge_qps_per_iteration, vec![1; 15]);
    assert_eq!(report.objective_distributed, dist.summary.closed_loop_cost_total);
    assert_eq!(report.objective_centralized, cent.summary.closed_loop_cost_total);
    assert!(cent.logs.iter().all(|l| l.node_qps == [1] && l.edge_qps == [0]));
    let text = serde_json::to_string(&report).unwrap();
    let back: ComparisonReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.max_deviation, report.max_deviation);
    assert_eq!(back.table.len(), report.table.len());
    assert!(report.table_text().contains("QP computation"));
}

#[test]
fn disturbance_after_the_last_cycle_is_not_reported() {
    let out = run(&load("push_recovery", &[("duration", "6")])).unwrap();
    assert!(out.summary.pushes.is_empty());
    assert!(out.summary.safety_ok);
}
