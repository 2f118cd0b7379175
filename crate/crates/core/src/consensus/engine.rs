//! Node–edge split scaled ADMM over the interaction graph.
//!
//! Each iteration runs the node updates of all agents, a barrier, the edge
//! updates at the edge owners, a barrier, and the dual updates at both
//! endpoints. Agents only learn about each other through [`Message`]s.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::InteractionGraph;
use super::transport::{Message, Payload, QueueTransport, Transport};
use crate::dynamics::{NU, NX};
use crate::error::{DmpcError, Result};
use crate::planner::{
    build_edge_qp, build_edge_set, consensus_linear_cost, edge_linear_cost, with_consensus_hessian,
    EdgeSet, LocalQp, OperatingPoint, PlannerConfig,
};
use crate::qp::{QpProblem, QpSettings, QpSolution, QpSolver, QpStatus};
use crate::scalar::{norm2, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdmmConfig<T> {
    pub rho: T,
    pub max_iter: usize,
    /// Stop early once primal and dual residuals fall below these.
    pub residual_stop: Option<(T, T)>,
    pub reset_duals_each_cycle: bool,
}

impl<T: Real> AdmmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > T::zero()) || !self.rho.is_finite() {
            return Err(DmpcError::InvalidArgument("rho must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(DmpcError::InvalidArgument("max ADMM iterations must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for AdmmConfig<f64> {
    fn default() -> Self {
        Self {
            rho: 20.0,
            max_iter: 15,
            residual_stop: None,
            reset_duals_each_cycle: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdmmResiduals<T> {
    /// Largest `‖ξ − z‖` over edge copies.
    pub primal: T,
    /// `ρ` times the largest change of an edge copy.
    pub dual: T,
}

/// Consensus variables of one edge as seen from outside the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EdgeState<T> {
    pub z_i: Vec<T>,
    pub z_j: Vec<T>,
    pub s: Vec<T>,
    pub lambda_i: Vec<T>,
    pub lambda_j: Vec<T>,
}

/// What an agent knows at the start of a cycle.
#[derive(Debug, Clone)]
pub struct AgentProblem<T: Real> {
    pub op: OperatingPoint<T>,
    pub local: LocalQp<T>,
}

/// Wall-clock seconds spent in each phase of one cycle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleTimings {
    /// Node solver setup (Hessian assembly and factorization) per agent.
    pub node_setup: Vec<f64>,
    /// Edge set linearization and solver setup per edge.
    pub edge_setup: Vec<f64>,
    /// `node[p][i]`: node QP solve of agent `i` in iteration `p`.
    pub node: Vec<Vec<f64>>,
    /// `edge[p][e]`: edge QP solve of edge `e` in iteration `p`.
    pub edge: Vec<Vec<f64>>,
    /// Elapsed time of the whole cycle on this machine.
    pub wall: f64,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl CycleTimings {
    /// Planning time when every agent computes on its own processor: the
    /// slowest worker of each synchronized phase, summed over phases.
    pub fn critical_path(&self) -> f64 {
        max_of(&self.node_setup)
            + max_of(&self.edge_setup)
            + self.node.iter().map(|v| max_of(v)).sum::<f64>()
            + self.edge.iter().map(|v| max_of(v)).sum::<f64>()
    }

    /// Total solver time if all QPs ran one after another.
    pub fn sequential(&self) -> f64 {
        self.node_setup.iter().sum::<f64>()
            + self.edge_setup.iter().sum::<f64>()
            + self.node.iter().flatten().sum::<f64>()
            + self.edge.iter().flatten().sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct CycleOutput<T> {
    /// Final node trajectories `ξⁱ` (continuous heading frame).
    pub plans: Vec<Vec<T>>,
    pub degraded: Vec<bool>,
    pub iterations: usize,
    pub residuals: Vec<AdmmResiduals<T>>,
    /// `edge_residuals[e][p]`.
    pub edge_residuals: Vec<Vec<AdmmResiduals<T>>>,
    pub edge_states: Vec<EdgeState<T>>,
    pub edge_sets: Vec<EdgeSet<T>>,
    /// Node and edge QPs solved in each iteration.
    pub node_qps: Vec<usize>,
    pub edge_qps: Vec<usize>,
    /// Node or edge QPs that stopped at the iteration cap.
    pub max_iter_hits: usize,
    pub timings: CycleTimings,
}

/// Node update as a standalone QP: the local problem plus
/// `ρ/2 Σ ‖ξ − z + λ‖²` over the given `(z, λ)` pairs.
pub fn node_update<T: Real>(
    local: &QpProblem<T>,
    terms: &[(&[T], &[T])],
    rho: T,
    settings: &QpSettings<T>,
) -> Result<QpSolution<T>> {
    let n = local.dim();
    if terms.iter().any(|(z, l)| z.len() != n || l.len() != n) {
        return Err(DmpcError::Dimension("consensus term length differs from ξ".into()));
    }
    let mut p = with_consensus_hessian(local, rho, terms.len())?;
    p.set_linear_cost(consensus_linear_cost(local.f(), rho, terms))?;
    crate::qp::solve(&p, settings)
}

/// Edge update as a standalone QP. Returns `(z_i, z_j, s)`.
#[allow(clippy::too_many_arguments)]
pub fn edge_update<T: Real>(
    set: &EdgeSet<T>,
    xi_i: &[T],
    xi_j: &[T],
    lambda_i: &[T],
    lambda_j: &[T],
    phi: T,
    rho: T,
    settings: &QpSettings<T>,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = set.xi_dim;
    if [xi_i, xi_j, lambda_i, lambda_j].iter().any(|v| v.len() != n) {
        return Err(DmpcError::Dimension("edge update inputs differ from ξ".into()));
    }
    let v_i: Vec<T> = xi_i.iter().zip(lambda_i).map(|(a, b)| *a + *b).collect();
    let v_j: Vec<T> = xi_j.iter().zip(lambda_j).map(|(a, b)| *a + *b).collect();
    let p = build_edge_qp(set, phi, rho, &v_i, &v_j)?;
    let sol = crate::qp::solve(&p, settings)?;
    if sol.status == QpStatus::PrimalInfeasible {
        return Err(DmpcError::InvalidArgument("edge QP reported infeasible".into()));
    }
    Ok(split_edge(&sol.x, n))
}

fn split_edge<T: Real>(x: &[T], n: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    (x[..n].to_vec(), x[n..2 * n].to_vec(), x[2 * n..].to_vec())
}

/// Scaled dual ascent `λ + ξ − z`.
pub fn dual_update<T: Real>(lambda: &[T], xi: &[T], z: &[T]) -> Vec<T> {
    lambda.iter().zip(xi).zip(z).map(|((l, x), z)| *l + (*x - *z)).collect()
}

/// One-step receding-horizon shift of a flattened trajectory-shaped vector,
/// repeating the last step and adding `heading_offset` to every heading.
pub fn shift_trajectory_vector<T: Real>(v: &[T], horizon: usize, heading_offset: T) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len());
    for k in 0..horizon {
        let src = (k + 1).min(horizon - 1);
        out.extend_from_slice(&v[NX * src..NX * src + NX]);
        out[NX * k + 2] += heading_offset;
    }
    let base = NX * horizon;
    for k in 0..horizon {
        let src = (k + 1).min(horizon - 1);
        out.extend_from_slice(&v[base + NU * src..base + NU * src + NU]);
    }
    out
}

fn shift_slack<T: Real>(s: &[T]) -> Vec<T> {
    if s.len() <= 1 {
        return s.to_vec();
    }
    let mut out = s[1..].to_vec();
    out.push(*s.last().unwrap());
    out
}

/// Multiple of `2π` that best maps the first heading of `shifted` onto the
/// first heading of `target`.
fn heading_offset<T: Real>(target: &[T], shifted: &[T]) -> T {
    let d = target[2] - shifted[2];
    (d / T::two_pi()).round() * T::two_pi()
}

fn diff_norm<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

/// This agent's side of one edge: its own edge copy and scaled dual.
#[derive(Debug, Clone)]
struct Link<T> {
    neighbor: usize,
    edge: usize,
    owner: usize,
    z: Vec<T>,
    lambda: Vec<T>,
}

/// Edge state held by the owning (lower-index) endpoint.
#[derive(Debug, Clone)]
struct OwnedEdge<T: Real> {
    edge: usize,
    link: usize,
    neighbor: usize,
    set: Option<EdgeSet<T>>,
    solver: Option<QpSolver<T>>,
    z_j: Vec<T>,
    s: Vec<T>,
    xi_j: Vec<T>,
    lambda_j: Vec<T>,
    residuals: Vec<AdmmResiduals<T>>,
    setup_time: f64,
    last_time: f64,
    max_iter_hits: usize,
}

#[derive(Debug, Clone)]
struct AgentNode<T: Real> {
    id: usize,
    links: Vec<Link<T>>,
    owned: Vec<OwnedEdge<T>>,
    xi: Vec<T>,
    op: Option<OperatingPoint<T>>,
    solver: Option<QpSolver<T>>,
    base_f: Vec<T>,
    degraded: bool,
    started: bool,
    setup_time: f64,
    last_time: f64,
    max_iter_hits: usize,
}

struct Ctx<'a, T: Real> {
    cfg: &'a AdmmConfig<T>,
    planner: &'a PlannerConfig<T>,
    qp: &'a QpSettings<T>,
    transport: &'a dyn Transport<T>,
    cycle: usize,
}

impl<T: Real> AgentNode<T> {
    fn new(id: usize, graph: &InteractionGraph) -> Self {
        let links = graph
            .neighbors(id)
            .iter()
            .map(|&j| {
                let edge = graph.edge_index(id, j).expect("neighbor has an edge");
                Link { neighbor: j, edge, owner: graph.owner(edge), z: Vec::new(), lambda: Vec::new() }
            })
            .collect::<Vec<_>>();
        let owned = links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.owner == id)
            .map(|(k, l)| OwnedEdge {
                edge: l.edge,
                link: k,
                neighbor: l.neighbor,
                set: None,
                solver: None,
                z_j: Vec::new(),
                s: Vec::new(),
                xi_j: Vec::new(),
                lambda_j: Vec::new(),
                residuals: Vec::new(),
                setup_time: 0.0,
                last_time: 0.0,
                max_iter_hits: 0,
            })
            .collect();
        Self {
            id,
            links,
            owned,
            xi: Vec::new(),
            op: None,
            solver: None,
            base_f: Vec::new(),
            degraded: false,
            started: false,
            setup_time: 0.0,
            last_time: 0.0,
            max_iter_hits: 0,
        }
    }

    fn send(&self, ctx: &Ctx<'_, T>, to: usize, iteration: usize, payload: Payload<T>) -> Result<()> {
        ctx.transport.send(Message { from: self.id, to, cycle: ctx.cycle, iteration, payload })
    }

    /// Warm-starts the consensus variables and factors the node QP, then
    /// shares the operating point with the owners of this agent's edges.
    fn prepare(&mut self, problem: AgentProblem<T>, ctx: &Ctx<'_, T>) -> Result<()> {
        let start = Instant::now();
        let n = ctx.planner.horizon;
        let op_xi = problem.op.xi();
        if self.started {
            let shifted = shift_trajectory_vector(&self.xi, n, T::zero());
            let off = heading_offset(&op_xi, &shifted);
            self.xi = shift_trajectory_vector(&self.xi, n, off);
            for l in self.links.iter_mut() {
                l.z = shift_trajectory_vector(&l.z, n, off);
                l.lambda = if ctx.cfg.reset_duals_each_cycle {
                    vec![T::zero(); op_xi.len()]
                } else {
                    shift_trajectory_vector(&l.lambda, n, T::zero())
                };
            }
        } else {
            self.xi = op_xi.clone();
            for l in self.links.iter_mut() {
                l.z = op_xi.clone();
                l.lambda = vec![T::zero(); op_xi.len()];
            }
        }
        let p = with_consensus_hessian(&problem.local.problem, ctx.cfg.rho, self.links.len())?;
        self.base_f = problem.local.problem.f().to_vec();
        let mut solver = QpSolver::new(&p, ctx.qp.clone())?;
        solver.warm_start(Some(&self.xi), None)?;
        self.solver = Some(solver);
        self.degraded = false;
        self.setup_time = start.elapsed().as_secs_f64();
        let x0 = problem.op.x0.to_array();
        let intent = problem.op.intent.clone();
        self.op = Some(problem.op);
        for l in self.links.iter().filter(|l| l.owner != self.id) {
            self.send(
                ctx,
                l.owner,
                0,
                Payload::TrajectoryShare {
                    xi: op_xi.clone(),
                    lambda: l.lambda.clone(),
                    x0: Some(x0),
                    intent: intent.clone(),
                },
            )?;
        }
        Ok(())
    }

    /// Linearizes owned edges at the shared operating points.
    fn prepare_edges(&mut self, inbox: Vec<Message<T>>, ctx: &Ctx<'_, T>) -> Result<()> {
        let n = ctx.planner.horizon;
        let own_op = self.op.clone().expect("prepared");
        for msg in inbox {
            let Payload::TrajectoryShare { xi, lambda, x0: Some(x0), intent } = msg.payload else {
                return Err(DmpcError::InvalidArgument("expected an operating point share".into()));
            };
            let start = Instant::now();
            let oe = self
                .owned
                .iter_mut()
                .find(|o| o.neighbor == msg.from)
                .ok_or(DmpcError::NotNeighbors { from: msg.from, to: self.id })?;
            let op_j = OperatingPoint::from_xi(crate::dynamics::AgentState::from_array(x0), &xi)?.with_intent(intent)?;
            let set = build_edge_set(&own_op, &op_j, ctx.planner)?;
            if self.started {
                let shifted = shift_trajectory_vector(&oe.z_j, n, T::zero());
                let off = heading_offset(&xi, &shifted);
                oe.z_j = shift_trajectory_vector(&oe.z_j, n, off);
                oe.s = shift_slack(&oe.s);
            } else {
                oe.z_j = xi.clone();
                oe.s = set.margins(&own_op.xi(), &xi).into_iter().map(|m| m.max(T::zero())).collect();
            }
            oe.xi_j = xi;
            oe.lambda_j = lambda;
            let z_i = &self.links[oe.link].z;
            let p = build_edge_qp(&set, ctx.planner.weights.phi, ctx.cfg.rho, z_i, &oe.z_j)?;
            let mut solver = QpSolver::new(&p, ctx.qp.clone())?;
            let mut warm = z_i.clone();
            warm.extend_from_slice(&oe.z_j);
            warm.extend_from_slice(&oe.s);
            solver.warm_start(Some(&warm), None)?;
            oe.solver = Some(solver);
            oe.set = Some(set);
            oe.residuals.clear();
            oe.setup_time = start.elapsed().as_secs_f64();
        }
        if self.owned.iter().any(|o| o.set.is_none()) {
            return Err(DmpcError::InvalidArgument(format!(
                "agent {} missing an operating point share",
                self.id
            )));
        }
        Ok(())
    }

    fn node_step(&mut self, p: usize, ctx: &Ctx<'_, T>) -> Result<()> {
        let terms: Vec<(&[T], &[T])> = self.links.iter().map(|l| (&l.z[..], &l.lambda[..])).collect();
        let f = consensus_linear_cost(&self.base_f, ctx.cfg.rho, &terms);
        let solver = self.solver.as_mut().expect("prepared");
        let start = Instant::now();
        solver.update_linear_cost(&f)?;
        let sol = solver.solve();
        self.last_time = start.elapsed().as_secs_f64();
        match sol.status {
            QpStatus::PrimalInfeasible => self.degraded = true,
            QpStatus::MaxIter => {
                self.max_iter_hits += 1;
                self.xi = sol.x;
            }
            QpStatus::Solved => self.xi = sol.x,
        }
        for l in self.links.iter().filter(|l| l.owner != self.id) {
            self.send(
                ctx,
                l.owner,
                p,
                Payload::TrajectoryShare { xi: self.xi.clone(), lambda: l.lambda.clone(), x0: None, intent: Vec::new() },
            )?;
        }
        Ok(())
    }

    fn edge_step(&mut self, p: usize, inbox: Vec<Message<T>>, ctx: &Ctx<'_, T>) -> Result<()> {
        for msg in inbox {
            let Payload::TrajectoryShare { xi, lambda, x0: None, .. } = msg.payload else {
                return Err(DmpcError::InvalidArgument("expected a trajectory share".into()));
            };
            let oe = self
                .owned
                .iter_mut()
                .find(|o| o.neighbor == msg.from)
                .ok_or(DmpcError::NotNeighbors { from: msg.from, to: self.id })?;
            oe.xi_j = xi;
            oe.lambda_j = lambda;
        }
        let rho = ctx.cfg.rho;
        for k in 0..self.owned.len() {
            let (link_idx, neighbor) = (self.owned[k].link, self.owned[k].neighbor);
            let lambda_i = self.links[link_idx].lambda.clone();
            let oe = &mut self.owned[k];
            let set = oe.set.as_ref().expect("prepared");
            let v_i: Vec<T> = self.xi.iter().zip(&lambda_i).map(|(a, b)| *a + *b).collect();
            let v_j: Vec<T> = oe.xi_j.iter().zip(&oe.lambda_j).map(|(a, b)| *a + *b).collect();
            let f = edge_linear_cost(rho, &v_i, &v_j, set.slack_dim);
            let solver = oe.solver.as_mut().expect("prepared");
            let start = Instant::now();
            solver.update_linear_cost(&f)?;
            let sol = solver.solve();
            oe.last_time = start.elapsed().as_secs_f64();
            match sol.status {
                QpStatus::PrimalInfeasible => {
                    return Err(DmpcError::EdgeInfeasible { i: self.id, j: neighbor, cycle: ctx.cycle })
                }
                QpStatus::MaxIter => oe.max_iter_hits += 1,
                QpStatus::Solved => {}
            }
            let (z_i, z_j, s) = split_edge(&sol.x, set.xi_dim);
            let link = &mut self.links[link_idx];
            let dual = rho * diff_norm(&z_i, &link.z).max(diff_norm(&z_j, &oe.z_j));
            let primal = diff_norm(&self.xi, &z_i).max(diff_norm(&oe.xi_j, &z_j));
            oe.residuals.push(AdmmResiduals { primal, dual });
            link.lambda = dual_update(&link.lambda, &self.xi, &z_i);
            link.z = z_i.clone();
            oe.z_j = z_j.clone();
            oe.s = s.clone();
            let msg = Message {
                from: self.id,
                to: neighbor,
                cycle: ctx.cycle,
                iteration: p,
                payload: Payload::EdgeResult { z_i, z_j, s },
            };
            ctx.transport.send(msg)?;
        }
        Ok(())
    }

    fn dual_step(&mut self, inbox: Vec<Message<T>>) -> Result<()> {
        for msg in inbox {
            let Payload::EdgeResult { z_j, .. } = msg.payload else {
                return Err(DmpcError::InvalidArgument("expected an edge result".into()));
            };
            let link = self
                .links
                .iter_mut()
                .find(|l| l.neighbor == msg.from && l.owner == msg.from)
                .ok_or(DmpcError::NotNeighbors { from: msg.from, to: self.id })?;
            link.lambda = dual_update(&link.lambda, &self.xi, &z_j);
            link.z = z_j;
        }
        Ok(())
    }
}

/// Runs the distributed solver cycle after cycle, keeping the consensus state
/// as the warm start of the next cycle.
pub struct ConsensusEngine<T: Real> {
    graph: InteractionGraph,
    cfg: AdmmConfig<T>,
    planner: PlannerConfig<T>,
    qp: QpSettings<T>,
    agents: Vec<AgentNode<T>>,
    transport: Arc<dyn Transport<T>>,
}

impl<T: Real> ConsensusEngine<T> {
    pub fn new(
        graph: InteractionGraph,
        cfg: AdmmConfig<T>,
        planner: PlannerConfig<T>,
        qp: QpSettings<T>,
    ) -> Result<Self> {
        let transport: Arc<dyn Transport<T>> = Arc::new(QueueTransport::new(graph.clone()));
        Self::with_transport(graph, cfg, planner, qp, transport)
    }

    pub fn with_transport(
        graph: InteractionGraph,
        cfg: AdmmConfig<T>,
        planner: PlannerConfig<T>,
        qp: QpSettings<T>,
        transport: Arc<dyn Transport<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        planner.validate()?;
        qp.validate()?;
        let agents = (0..graph.num_nodes()).map(|i| AgentNode::new(i, &graph)).collect();
        Ok(Self { graph, cfg, planner, qp, agents, transport })
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn config(&self) -> &AdmmConfig<T> {
        &self.cfg
    }

    /// Forgets all warm-start state.
    pub fn reset(&mut self) {
        self.agents = (0..self.graph.num_nodes()).map(|i| AgentNode::new(i, &self.graph)).collect();
    }

    pub fn run_cycle(&mut self, problems: Vec<AgentProblem<T>>, cycle: usize) -> Result<CycleOutput<T>> {
        let wall = Instant::now();
        let n_agents = self.graph.num_nodes();
        if problems.len() != n_agents {
            return Err(DmpcError::InvalidArgument(format!(
                "{} agent problems for {n_agents} agents",
                problems.len()
            )));
        }
        let transport = Arc::clone(&self.transport);
        let ctx = Ctx {
            cfg: &self.cfg,
            planner: &self.planner,
            qp: &self.qp,
            transport: transport.as_ref(),
            cycle,
        };
        let receive_all = |t: &dyn Transport<T>| -> Vec<Vec<Message<T>>> { (0..n_agents).map(|i| t.receive(i)).collect() };

        self.agents
            .par_iter_mut()
            .zip(problems.into_par_iter())
            .try_for_each(|(a, p)| a.prepare(p, &ctx))?;
        let inboxes = receive_all(ctx.transport);
        self.agents
            .par_iter_mut()
            .zip(inboxes.into_par_iter())
            .try_for_each(|(a, inbox)| a.prepare_edges(inbox, &ctx))?;

        let n_edges = self.graph.num_edges();
        let mut timings = CycleTimings {
            node_setup: self.agents.iter().map(|a| a.setup_time).collect(),
            edge_setup: vec![0.0; n_edges],
            ..CycleTimings::default()
        };
        for a in &self.agents {
            for o in &a.owned {
                timings.edge_setup[o.edge] = o.setup_time;
            }
        }
        // Without edges one node solve is the whole answer.
        let iterations = if n_edges == 0 { 1 } else { self.cfg.max_iter };
        let mut residuals = Vec::new();
        let mut node_qps = Vec::new();
        let mut edge_qps = Vec::new();
        let mut done = 0;
        for p in 1..=iterations {
            self.agents.par_iter_mut().try_for_each(|a| a.node_step(p, &ctx))?;
            timings.node.push(self.agents.iter().map(|a| a.last_time).collect());
            node_qps.push(n_agents);
            done = p;
            if n_edges == 0 {
                break;
            }
            let inboxes = receive_all(ctx.transport);
            self.agents
                .par_iter_mut()
                .zip(inboxes.into_par_iter())
                .try_for_each(|(a, inbox)| a.edge_step(p, inbox, &ctx))?;
            let mut edge_t = vec![0.0; n_edges];
            let mut res = AdmmResiduals { primal: T::zero(), dual: T::zero() };
            for a in &self.agents {
                for o in &a.owned {
                    edge_t[o.edge] = o.last_time;
                    let r = o.residuals.last().expect("edge solved");
                    res.primal = res.primal.max(r.primal);
                    res.dual = res.dual.max(r.dual);
                }
            }
            timings.edge.push(edge_t);
            edge_qps.push(n_edges);
            let inboxes = receive_all(ctx.transport);
            self.agents
                .par_iter_mut()
                .zip(inboxes.into_par_iter())
                .try_for_each(|(a, inbox)| a.dual_step(inbox))?;
            residuals.push(res);
            if let Some((ep, ed)) = self.cfg.residual_stop {
                if res.primal <= ep && res.dual <= ed {
                    break;
                }
            }
        }

        let mut edge_states: Vec<Option<EdgeState<T>>> = vec![None; n_edges];
        let mut edge_sets: Vec<Option<EdgeSet<T>>> = vec![None; n_edges];
        let mut edge_residuals = vec![Vec::new(); n_edges];
        let mut max_iter_hits = 0;
        for a in &self.agents {
            max_iter_hits += a.max_iter_hits;
            for o in &a.owned {
                max_iter_hits += o.max_iter_hits;
                let j = &self.agents[o.neighbor];
                let lambda_j = j
                    .links
                    .iter()
                    .find(|l| l.edge == o.edge)
                    .map(|l| l.lambda.clone())
                    .unwrap_or_default();
                edge_states[o.edge] = Some(EdgeState {
                    z_i: a.links[o.link].z.clone(),
                    z_j: o.z_j.clone(),
                    s: o.s.clone(),
                    lambda_i: a.links[o.link].lambda.clone(),
                    lambda_j,
                });
                edge_sets[o.edge] = o.set.clone();
                edge_residuals[o.edge] = o.residuals.clone();
            }
        }
        for a in self.agents.iter_mut() {
            a.started = true;
            a.max_iter_hits = 0;
            for o in a.owned.iter_mut() {
                o.max_iter_hits = 0;
            }
        }
        timings.wall = wall.elapsed().as_secs_f64();
        let _ = done;
        Ok(CycleOutput {
            plans: self.agents.iter().map(|a| a.xi.clone()).collect(),
            degraded: self.agents.iter().map(|a| a.degraded).collect(),
            iterations: node_qps.len(),
            residuals,
            edge_residuals,
            edge_states: edge_states.into_iter().map(|e| e.expect("every edge owned")).collect(),
            edge_sets: edge_sets.into_iter().map(|e| e.expect("every edge owned")).collect(),
            node_qps,
            edge_qps,
            max_iter_hits,
            timings,
        })
    }
}

/// `‖v‖₂` of a consensus residual vector, exposed for diagnostics.
pub fn residual_norm<T: Real>(v: &[T]) -> T {
    norm2(v)
}
