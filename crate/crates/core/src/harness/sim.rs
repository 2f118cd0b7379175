//! Closed-loop simulation: plan, apply the first input to the exact plant,
//! disturb, repeat.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::log::{AgentStep, EdgeStep, StepLog, StepTimings};
use super::scenario::{Scenario, SolverKind};
use crate::consensus::{AdmmResiduals, AgentProblem, ConsensusEngine, InteractionGraph};
use crate::dynamics::{
    bezier_reference_paced, step, wrap_angle, AgentState, AgentTrajectory, ControlInput, ReferenceTrajectory,
};
use crate::error::{DmpcError, Result};
use crate::planner::{
    build_centralized_qp, build_edge_set, build_local_qp, fallback_plan, tracking_cost,
    EdgeSet, LocalQp, OperatingPoint, PlannerConfig,
};
use crate::qp::{solve, QpSettings, QpSolver, QpStatus};
use crate::safety::{h_interagent, h_obstacle, Obstacle};

/// Position tolerance for "arrived".
pub const GOAL_POSITION_TOL: f64 = 0.1;
/// Heading tolerance for "arrived".
pub const GOAL_HEADING_TOL: f64 = 0.2;
/// Allowed CBF dip from linearization error in nominal operation.
pub const NOMINAL_H_TOL: f64 = 0.02;
/// Cycles after a push ends within which `h` must be back at or above zero.
pub const RECOVERY_WINDOW: usize = 10;

pub fn arrived(x: &AgentState<f64>, goal: &AgentState<f64>) -> bool {
    x.distance_to(goal) <= GOAL_POSITION_TOL && wrap_angle(x.theta - goal.theta).abs() <= GOAL_HEADING_TOL
}

/// What one solver returns for one cycle.
struct Solved {
    plans: Vec<Vec<f64>>,
    degraded: Vec<bool>,
    edge_sets: Vec<EdgeSet<f64>>,
    residuals: Vec<Vec<AdmmResiduals<f64>>>,
    slacks: Vec<Option<Vec<f64>>>,
    iterations: usize,
    node_qps: Vec<usize>,
    edge_qps: Vec<usize>,
    max_iter_hits: usize,
    node_times: Vec<f64>,
    edge_times: Vec<f64>,
    planning: f64,
    sequential: f64,
}

pub struct Simulation {
    scenario: Scenario,
    cfg: PlannerConfig<f64>,
    qp: QpSettings<f64>,
    graph: InteractionGraph,
    obstacles: Vec<Obstacle<f64>>,
    goals: Vec<AgentState<f64>>,
    engine: Option<ConsensusEngine<f64>>,
    states: Vec<AgentState<f64>>,
    last_plans: Vec<Option<AgentTrajectory<f64>>>,
    cycle: usize,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let cfg = scenario.planner_config();
        let qp = scenario.qp_settings();
        let graph = scenario.graph()?;
        let engine = match scenario.solver {
            SolverKind::Distributed => {
                Some(ConsensusEngine::new(graph.clone(), scenario.admm_config(), cfg.clone(), qp.clone())?)
            }
            _ => None,
        };
        let states = scenario.starts();
        Ok(Self {
            cfg,
            qp,
            obstacles: scenario.resolved_obstacles()?,
            goals: scenario.goals(),
            engine,
            last_plans: vec![None; states.len()],
            states,
            graph,
            cycle: 0,
            scenario: scenario.clone(),
        })
    }

    pub fn states(&self) -> &[AgentState<f64>] {
        &self.states
    }

    pub fn obstacles(&self) -> &[Obstacle<f64>] {
        &self.obstacles
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    /// References, operating points and local QPs of the coming cycle.
    pub fn prepare(&self) -> Result<Vec<(ReferenceTrajectory<f64>, AgentProblem<f64>, f64)>> {
        let n = self.cfg.horizon;
        (0..self.states.len())
            .into_par_iter()
            .map(|i| {
                let start = Instant::now();
                let x = self.states[i];
                let step_len = self.scenario.reference_speed.map(|v| v * self.cfg.ts);
                let reference = bezier_reference_paced(&x, &self.goals[i], n, step_len)?;
                let inputs = match &self.last_plans[i] {
                    Some(p) => p.shifted_inputs(),
                    // Holding position keeps the first linearization feasible;
                    // a straight rollout can pass through a neighbor or obstacle.
                    None => vec![ControlInput::new(0.0, 0.0); n],
                };
                let intent = reference.samples[1..].iter().map(|s| [s.px, s.py]).collect();
                let op = OperatingPoint::from_inputs(x, inputs, self.cfg.ts)?.with_intent(intent)?;
                let local = build_local_qp(&op, &reference, &self.obstacles, &self.cfg)?;
                Ok((reference, AgentProblem { op, local }, start.elapsed().as_secs_f64()))
            })
            .collect()
    }

    fn solve_distributed(&mut self, problems: Vec<AgentProblem<f64>>) -> Result<Solved> {
        let engine = self.engine.as_mut().expect("distributed solver has an engine");
        let out = engine.run_cycle(problems, self.cycle)?;
        Ok(Solved {
            residuals: out.edge_residuals.clone(),
            slacks: out.edge_states.iter().map(|e| Some(e.s.clone())).collect(),
            node_times: out.timings.node.iter().flatten().copied().collect(),
            edge_times: out.timings.edge.iter().flatten().copied().collect(),
            planning: out.timings.critical_path(),
            sequential: out.timings.sequential(),
            plans: out.plans,
            degraded: out.degraded,
            edge_sets: out.edge_sets,
            iterations: out.iterations,
            node_qps: out.node_qps,
            edge_qps: out.edge_qps,
            max_iter_hits: out.max_iter_hits,
        })
    }

    fn solve_centralized(&self, problems: &[AgentProblem<f64>], refs: &[ReferenceTrajectory<f64>]) -> Result<Solved> {
        let start = Instant::now();
        let ops: Vec<_> = problems.iter().map(|p| p.op.clone()).collect();
        let cq = build_centralized_qp(&ops, refs, &self.obstacles, self.graph.edges(), &self.cfg)?;
        let mut warm: Vec<f64> = ops.iter().flat_map(|o| o.xi()).collect();
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            warm.extend(cq.edge_sets[e].margins(&ops[i].xi(), &ops[j].xi()).into_iter().map(|m| m.max(0.0)));
        }
        let mut solver = QpSolver::new(&cq.problem, self.qp.clone())?;
        solver.warm_start(Some(&warm), None)?;
        let sol = solver.solve();
        let elapsed = start.elapsed().as_secs_f64();
        let n = problems.len();
        let infeasible = sol.status == QpStatus::PrimalInfeasible;
        let plans = (0..n)
            .map(|i| if infeasible { problems[i].op.xi() } else { cq.agent_slice(&sol.x, i).to_vec() })
            .collect();
        let slacks = cq
            .slack_offsets
            .iter()
            .zip(&cq.edge_sets)
            .map(|(&o, s)| if infeasible { None } else { Some(sol.x[o..o + s.slack_dim].to_vec()) })
            .collect();
        Ok(Solved {
            plans,
            degraded: vec![infeasible; n],
            edge_sets: cq.edge_sets,
            residuals: vec![Vec::new(); self.graph.num_edges()],
            slacks,
            iterations: 1,
            node_qps: vec![1],
            edge_qps: vec![0],
            max_iter_hits: usize::from(sol.status == QpStatus::MaxIter),
            node_times: vec![elapsed],
            edge_times: Vec::new(),
            planning: elapsed,
            sequential: elapsed,
        })
    }

    fn solve_decoupled(&self, problems: &[AgentProblem<f64>]) -> Result<Solved> {
        let results: Vec<(Vec<f64>, bool, bool, f64)> = problems
            .par_iter()
            .map(|p| {
                let start = Instant::now();
                let sol = solve(&p.local.problem, &self.qp)?;
                let t = start.elapsed().as_secs_f64();
                let bad = sol.status == QpStatus::PrimalInfeasible;
                let x = if bad { p.op.xi() } else { sol.x };
                Ok((x, bad, sol.status == QpStatus::MaxIter, t))
            })
            .collect::<Result<_>>()?;
        let edge_sets = self.edge_sets_at(problems)?;
        let times: Vec<f64> = results.iter().map(|r| r.3).collect();
        Ok(Solved {
            degraded: results.iter().map(|r| r.1).collect(),
            max_iter_hits: results.iter().filter(|r| r.2).count(),
            plans: results.into_iter().map(|r| r.0).collect(),
            residuals: vec![Vec::new(); edge_sets.len()],
            slacks: vec![None; edge_sets.len()],
            edge_sets,
            iterations: 1,
            node_qps: vec![problems.len()],
            edge_qps: vec![0],
            planning: times.iter().copied().fold(0.0, f64::max),
            sequential: times.iter().sum(),
            node_times: times,
            edge_times: Vec::new(),
        })
    }

    fn edge_sets_at(&self, problems: &[AgentProblem<f64>]) -> Result<Vec<EdgeSet<f64>>> {
        self.graph.edges().iter().map(|&(i, j)| build_edge_set(&problems[i].op, &problems[j].op, &self.cfg)).collect()
    }

    /// Runs one control cycle and advances the plant.
    pub fn step(&mut self) -> Result<StepLog> {
        let wall = Instant::now();
        let t = self.cycle;
        let prepared = self.prepare()?;
        let mut refs = Vec::with_capacity(prepared.len());
        let mut problems = Vec::with_capacity(prepared.len());
        let mut build = Vec::with_capacity(prepared.len());
        for (r, p, dt) in prepared {
            refs.push(r);
            problems.push(p);
            build.push(dt);
        }
        let locals: Vec<LocalQp<f64>> = problems.iter().map(|p| p.local.clone()).collect();
        let build_max = build.iter().copied().fold(0.0, f64::max);
        let solved = match self.scenario.solver {
            SolverKind::Distributed => {
                let mut s = self.solve_distributed(problems)?;
                s.planning += build_max;
                s.sequential += build.iter().sum::<f64>();
                s
            }
            SolverKind::Centralized => self.solve_centralized(&problems, &refs)?,
            SolverKind::Decoupled => {
                let mut s = self.solve_decoupled(&problems)?;
                s.planning += build_max;
                s.sequential += build.iter().sum::<f64>();
                s
            }
        };

        let n_agents = self.states.len();
        let n = self.cfg.horizon;
        let ts = self.cfg.ts;
        let mut plan_xi = Vec::with_capacity(n_agents);
        let mut trajs = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            if solved.degraded[i] {
                let fb = fallback_plan(self.last_plans[i].as_ref(), &self.states[i], n, ts, t)?;
                plan_xi.push(OperatingPoint::from_inputs(self.states[i], fb.inputs.clone(), ts)?.xi());
                trajs.push(fb);
            } else {
                trajs.push(AgentTrajectory::unflatten(&solved.plans[i], t)?);
                plan_xi.push(solved.plans[i].clone());
            }
        }
        let mut objective: f64 =
            (0..n_agents).map(|i| tracking_cost(&plan_xi[i], &locals[i].reference, &self.cfg.weights)).sum();
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let m = solved.edge_sets[e].margins(&plan_xi[i], &plan_xi[j]);
            objective += self.cfg.weights.phi * m.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>();
        }

        let safety = self.cfg.safety;
        let mut agents = Vec::with_capacity(n_agents);
        let mut next = Vec::with_capacity(n_agents);
        let mut closed_loop_cost = 0.0;
        for i in 0..n_agents {
            let x = self.states[i];
            let u = self.cfg.bounds.clamp(&trajs[i].inputs[0]);
            let mut x1 = step(&x, &u, ts)?;
            closed_loop_cost += stage_cost(&x1, &u, &locals[i].reference[0], &self.cfg);
            let mut pushed = false;
            for p in self.scenario.disturbances.iter().filter(|p| p.agent == i && p.active(t)) {
                x1 = x1.offset(&AgentState { px: p.delta[0], py: p.delta[1], theta: p.delta[2] });
                pushed = true;
            }
            next.push(x1);
            agents.push(AgentStep {
                agent: i,
                state: x,
                input: u,
                plan: trajs[i].clone(),
                h_obs: self.obstacles.iter().map(|o| h_obstacle(&x, o, &safety)).reduce(f64::min),
                goal_distance: x.distance_to(&self.goals[i]),
                degraded: solved.degraded[i],
                pushed,
            });
        }
        let edges = self
            .graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| EdgeStep {
                i,
                j,
                h: h_interagent(&self.states[i], &self.states[j], &safety),
                distance: self.states[i].distance_to(&self.states[j]),
                residuals: solved.residuals[e].clone(),
                slack_max: solved.slacks[e].as_ref().and_then(|s| s.iter().copied().reduce(f64::max)),
            })
            .collect();

        self.last_plans = trajs.into_iter().map(Some).collect();
        self.states = next;
        self.cycle += 1;
        Ok(StepLog {
            cycle: t,
            agents,
            edges,
            admm_iterations: solved.iterations,
            node_qps: solved.node_qps,
            edge_qps: solved.edge_qps,
            qp_max_iter_hits: solved.max_iter_hits,
            objective,
            closed_loop_cost,
            timings: StepTimings {
                cycle: t,
                build,
                node: solved.node_times,
                edge: solved.edge_times,
                planning: solved.planning,
                sequential: solved.sequential,
                wall: wall.elapsed().as_secs_f64(),
            },
        })
    }
}

fn stage_cost(x: &AgentState<f64>, u: &ControlInput<f64>, r: &[f64; 3], cfg: &PlannerConfig<f64>) -> f64 {
    let e = [x.px - r[0], x.py - r[1], wrap_angle(x.theta - r[2])];
    let w = &cfg.weights;
    let mut acc = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            acc += e[a] * w.q[a][b] * e[b];
        }
    }
    let uv = [u.v, u.omega];
    for a in 0..2 {
        for b in 0..2 {
            acc += uv[a] * w.r[a][b] * uv[b];
        }
    }
    acc
}

/// How one disturbance played out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushOutcome {
    pub agent: usize,
    pub start_cycle: usize,
    pub end_cycle: usize,
    /// Smallest `h` touching the agent from the first disturbed measurement on.
    pub min_h: Option<f64>,
    /// Cycles after the last disturbed measurement until `h ≥ 0` is reached and
    /// then kept within the nominal tolerance for the rest of the run.
    pub recovery_cycles: Option<usize>,
    pub went_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub solver: SolverKind,
    pub cycles: usize,
    pub agents: usize,
    /// First cycle at which each agent was within goal tolerance.
    pub arrivals: Vec<Option<usize>>,
    pub final_goal_distance: Vec<f64>,
    pub min_h_obs: Option<f64>,
    pub min_h_edge: Option<f64>,
    /// Smallest distance over all agent pairs and cycles.
    pub min_pair_distance: Option<f64>,
    /// Smallest `h` over cycles not influenced by a disturbance.
    pub min_h_nominal: Option<f64>,
    pub degraded_cycles: usize,
    pub degraded_agent_steps: usize,
    pub pushes: Vec<PushOutcome>,
    pub qp_max_iter_hits: usize,
    /// Sum of the planned objectives.
    pub objective_total: f64,
    pub closed_loop_cost_total: f64,
    pub planning_ms_mean: f64,
    pub planning_ms_std: f64,
    pub safety_ok: bool,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn min_opt(it: impl Iterator<Item = f64>) -> Option<f64> {
    it.reduce(f64::min)
}

impl RunSummary {
    pub fn from_logs(sc: &Scenario, logs: &[StepLog], final_states: &[AgentState<f64>]) -> Self {
        let goals = sc.goals();
        let n = sc.agents.len();
        let arrivals = (0..n)
            .map(|i| {
                logs.iter()
                    .find(|l| arrived(&l.agents[i].state, &goals[i]))
                    .map(|l| l.cycle)
                    .or_else(|| arrived(&final_states[i], &goals[i]).then_some(logs.len()))
            })
            .collect();
        let pair_min = |states: &[AgentState<f64>]| {
            let mut m: Option<f64> = None;
            for i in 0..states.len() {
                for j in i + 1..states.len() {
                    let d = states[i].distance_to(&states[j]);
                    m = Some(m.map_or(d, |v: f64| v.min(d)));
                }
            }
            m
        };
        let min_pair_distance = logs
            .iter()
            .filter_map(|l| pair_min(&l.agents.iter().map(|a| a.state).collect::<Vec<_>>()))
            .chain(pair_min(final_states))
            .reduce(f64::min);

        // Measurements at cycles start+1 ..= end+1 are disturbed; the window
        // for recovery follows.
        let influenced = |c: usize| {
            sc.disturbances.iter().any(|p| c > p.start_cycle && c <= p.end_cycle + 1 + RECOVERY_WINDOW)
        };
        let cycle_h_min = |l: &StepLog| min_opt((0..n).filter_map(|i| l.agent_h_min(i)));
        let min_h_nominal = min_opt(logs.iter().filter(|l| !influenced(l.cycle)).filter_map(cycle_h_min));

        // Disturbances scheduled past the end of the run never fired.
        let pushes = sc
            .disturbances
            .iter()
            .filter(|p| p.start_cycle < logs.len())
            .map(|p| {
                let after: Vec<(usize, f64)> = logs
                    .iter()
                    .filter(|l| l.cycle > p.start_cycle)
                    .filter_map(|l| l.agent_h_min(p.agent).map(|h| (l.cycle, h)))
                    .collect();
                let min_h = min_opt(after.iter().map(|x| x.1));
                let last_hit = p.end_cycle + 1;
                let tail: Vec<(usize, f64)> = after.iter().copied().filter(|(c, _)| *c >= last_hit).collect();
                let recovery_cycles = tail.iter().position(|&(_, h)| h >= 0.0).and_then(|k| {
                    let stays = tail[k..].iter().all(|&(_, h)| h >= -NOMINAL_H_TOL);
                    stays.then(|| tail[k].0 - last_hit)
                });
                PushOutcome {
                    agent: p.agent,
                    start_cycle: p.start_cycle,
                    end_cycle: p.end_cycle,
                    min_h,
                    recovery_cycles,
                    went_negative: min_h.is_some_and(|h| h < 0.0),
                }
            })
            .collect::<Vec<_>>();
        let planning: Vec<f64> = logs.iter().map(|l| l.timings.planning * 1e3).collect();
        let (planning_ms_mean, planning_ms_std) = mean_std(&planning);
        let pushes_ok = pushes.iter().all(|p| p.recovery_cycles.is_some_and(|r| r <= RECOVERY_WINDOW));
        let nominal_ok = min_h_nominal.map_or(true, |h| h >= -NOMINAL_H_TOL);
        RunSummary {
            name: sc.name.clone(),
            solver: sc.solver,
            cycles: logs.len(),
            agents: n,
            arrivals,
            final_goal_distance: final_states.iter().zip(&goals).map(|(x, g)| x.distance_to(g)).collect(),
            min_h_obs: min_opt(logs.iter().flat_map(|l| l.agents.iter().filter_map(|a| a.h_obs))),
            min_h_edge: min_opt(logs.iter().flat_map(|l| l.edges.iter().map(|e| e.h))),
            min_pair_distance,
            min_h_nominal,
            degraded_cycles: logs.iter().filter(|l| l.agents.iter().any(|a| a.degraded)).count(),
            degraded_agent_steps: logs.iter().map(|l| l.agents.iter().filter(|a| a.degraded).count()).sum(),
            pushes,
            qp_max_iter_hits: logs.iter().map(|l| l.qp_max_iter_hits).sum(),
            objective_total: logs.iter().map(|l| l.objective).sum(),
            closed_loop_cost_total: logs.iter().map(|l| l.closed_loop_cost).sum(),
            planning_ms_mean,
            planning_ms_std,
            safety_ok: nominal_ok && pushes_ok,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub logs: Vec<StepLog>,
    pub final_states: Vec<AgentState<f64>>,
    pub summary: RunSummary,
}

/// Runs the scenario for its full duration.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    let mut sim = Simulation::new(scenario)?;
    let mut logs = Vec::with_capacity(scenario.duration);
    for _ in 0..scenario.duration {
        logs.push(sim.step()?);
    }
    let final_states = sim.states().to_vec();
    if final_states.iter().any(|x| !x.is_finite()) {
        return Err(DmpcError::InvalidArgument("plant state became non-finite".into()));
    }
    let summary = RunSummary::from_logs(scenario, &logs, &final_states);
    Ok(RunOutput { scenario: scenario.clone(), logs, final_states, summary })
}
