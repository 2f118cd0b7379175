//! Per-cycle records and their file formats.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::AdmmResiduals;
use crate::dynamics::{AgentState, AgentTrajectory, ControlInput};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub agent: usize,
    /// Plant state measured at the start of the cycle.
    pub state: AgentState<f64>,
    /// Input applied to the plant.
    pub input: ControlInput<f64>,
    pub plan: AgentTrajectory<f64>,
    /// `min_ℓ h^{i,ℓ}` at `state`; `None` without obstacles.
    pub h_obs: Option<f64>,
    pub goal_distance: f64,
    pub degraded: bool,
    /// A disturbance hits this agent after this cycle's step.
    pub pushed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStep {
    pub i: usize,
    pub j: usize,
    /// `h^{i,j}` at the measured states.
    pub h: f64,
    pub distance: f64,
    /// ADMM residuals after every iteration (distributed solver only).
    pub residuals: Vec<AdmmResiduals<f64>>,
    /// Largest slack of the edge in the returned solution.
    pub slack_max: Option<f64>,
}

/// Solver wall-clock data in seconds. Kept out of the main log so that logs
/// are reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub cycle: usize,
    /// Local QP construction per agent.
    pub build: Vec<f64>,
    /// Every node QP solve of the cycle (for the centralized solver, the one
    /// stacked solve including setup).
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
    /// Per-cycle planning time: the slowest agent of every synchronized
    /// phase for the distributed solver, the whole solve otherwise.
    pub planning: f64,
    /// The same work executed back to back on one processor.
    pub sequential: f64,
    pub wall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub cycle: usize,
    pub agents: Vec<AgentStep>,
    pub edges: Vec<EdgeStep>,
    pub admm_iterations: usize,
    /// Node and edge QPs solved in each ADMM iteration.
    pub node_qps: Vec<usize>,
    pub edge_qps: Vec<usize>,
    /// QP solves that stopped at their iteration cap.
    pub qp_max_iter_hits: usize,
    /// `Σ J(ξ) + Σ φ‖max(0, ψ-margin)‖²` of the returned plans.
    pub objective: f64,
    /// Stage cost actually incurred: `Σ ‖x(t+1) − x^des_{t+1|t}‖²_Q + ‖u(t)‖²_R`
    /// over agents, with the plant state before any disturbance.
    pub closed_loop_cost: f64,
    #[serde(skip)]
    pub timings: StepTimings,
}

impl StepLog {
    /// Smallest `h` touching agent `i`, over obstacles and incident edges.
    pub fn agent_h_min(&self, i: usize) -> Option<f64> {
        let obs = self.agents.get(i).and_then(|a| a.h_obs);
        let edge = self.edge_h_min(i);
        match (obs, edge) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn edge_h_min(&self, i: usize) -> Option<f64> {
        self.edges.iter().filter(|e| e.i == i || e.j == i).map(|e| e.h).reduce(f64::min)
    }
}

pub fn write_jsonl(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in logs {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StepLog>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

pub fn write_timings(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in logs {
        serde_json::to_writer(&mut w, &l.timings)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `cycle, agent, px, py, theta, v, omega, h_obs, h_edge_min`; missing
/// values are left empty.
pub fn trajectory_csv(logs: &[StepLog]) -> String {
    let mut out = String::from("cycle,agent,px,py,theta,v,omega,h_obs,h_edge_min\n");
    for l in logs {
        for a in &l.agents {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                l.cycle,
                a.agent,
                a.state.px,
                a.state.py,
                a.state.theta,
                a.input.v,
                a.input.omega,
                opt(a.h_obs),
                opt(l.edge_h_min(a.agent)),
            ));
        }
    }
    out
}

pub fn write_csv(path: &Path, logs: &[StepLog]) -> Result<()> {
    std::fs::write(path, trajectory_csv(logs))?;
    Ok(())
}
