//! Scenario files: agents, obstacles, solver configuration and disturbances.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::consensus::{AdmmConfig, InteractionGraph};
use crate::dynamics::AgentState;
use crate::error::{DmpcError, Result};
use crate::planner::{CostWeights, EdgeCbfMode, InputBounds, PlannerConfig};
use crate::qp::QpSettings;
use crate::safety::{Obstacle, SafetyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Distributed,
    Centralized,
    /// Every agent solves its local problem alone, ignoring all edges.
    Decoupled,
}

impl std::str::FromStr for SolverKind {
    type Err = DmpcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distributed" => Ok(Self::Distributed),
            "centralized" => Ok(Self::Centralized),
            "decoupled" => Ok(Self::Decoupled),
            other => Err(DmpcError::Scenario(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Distributed => "distributed",
            Self::Centralized => "centralized",
            Self::Decoupled => "decoupled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// `[px, py, θ]`
    pub start: [f64; 3],
    pub goal: [f64; 3],
}

/// Additive plant disturbance applied after the step of every cycle in
/// `start_cycle..=end_cycle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushEvent {
    pub agent: usize,
    pub start_cycle: usize,
    pub end_cycle: usize,
    pub delta: [f64; 3],
}

impl PushEvent {
    pub fn active(&self, cycle: usize) -> bool {
        (self.start_cycle..=self.end_cycle).contains(&cycle)
    }
}

/// Obstacles drawn uniformly from a box, rejecting draws closer than
/// `clearance` to any agent start or goal or to an earlier obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomObstacles {
    pub count: usize,
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub clearance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Complete,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Kind(GraphKind),
    Edges { edges: Vec<[usize; 2]> },
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self::Kind(GraphKind::Complete)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSpec {
    /// Diagonals of Q, R and P.
    pub q: [f64; 3],
    pub r: [f64; 2],
    pub p: [f64; 3],
    pub phi: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { q: [50.0, 50.0, 100.0], r: [50.0, 10.0], p: [500.0, 500.0, 1000.0], phi: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySpec {
    pub d_th: f64,
    /// Slope of the linear class-K function.
    pub alpha: f64,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self { d_th: 0.5, alpha: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSpec {
    pub rho: f64,
    pub max_iter: usize,
    pub residual_stop: Option<[f64; 2]>,
    pub reset_duals_each_cycle: bool,
}

impl Default for AdmmSpec {
    fn default() -> Self {
        Self { rho: 20.0, max_iter: 15, residual_stop: None, reset_duals_each_cycle: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSpec {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Refine each solution on its active set after the iterations stop.
    pub polish: bool,
}

impl Default for QpSpec {
    fn default() -> Self {
        Self { eps_abs: 1e-6, eps_rel: 1e-6, max_iter: 200, polish: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSpec {
    pub v: [f64; 2],
    pub omega: [f64; 2],
}

impl Default for BoundsSpec {
    fn default() -> Self {
        let b = InputBounds::default();
        Self { v: b.v, omega: b.omega }
    }
}

fn default_horizon() -> usize {
    50
}
fn default_ts() -> f64 {
    0.1
}
fn default_radius() -> Option<f64> {
    Some(3.0)
}
fn default_reference_speed() -> Option<f64> {
    Some(0.5)
}
fn default_duration() -> usize {
    150
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub obstacles: Vec<[f64; 2]>,
    #[serde(default)]
    pub random_obstacles: Option<RandomObstacles>,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default)]
    pub safety: SafetySpec,
    #[serde(default)]
    pub admm: AdmmSpec,
    #[serde(default)]
    pub qp: QpSpec,
    #[serde(default)]
    pub bounds: BoundsSpec,
    /// `null` keeps every obstacle.
    #[serde(default = "default_radius")]
    pub obstacle_activation_radius: Option<f64>,
    /// `null` keeps every inter-agent row.
    #[serde(default = "default_radius")]
    pub edge_activation_radius: Option<f64>,
    #[serde(default)]
    pub edge_cbf: EdgeCbfMode,
    /// Pace of the reference along its curve in m/s; `null` stretches the
    /// curve over the whole horizon.
    #[serde(default = "default_reference_speed")]
    pub reference_speed: Option<f64>,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub disturbances: Vec<PushEvent>,
    #[serde(default = "default_duration")]
    pub duration: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Sets `key` (dot-separated, numeric segments index arrays) in a JSON tree.
/// `raw` is parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(DmpcError::Scenario(format!("malformed override key '{key}'")));
    }
    let mut node = root;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| DmpcError::Scenario(format!("'{part}' in '{key}' is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| DmpcError::Scenario(format!("index {idx} in '{key}' out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(DmpcError::Scenario(format!("'{key}' descends into a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(DmpcError::Scenario(format!("override '{s}' is not of the form key=value"))),
    }
}

impl Scenario {
    /// Parses without validating.
    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| DmpcError::Scenario(format!("schema: {e}")))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| DmpcError::Scenario(format!("invalid JSON: {e}")))?;
        let sc = Self::from_value(v)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Reads a scenario file, applies `key=value` overrides and validates.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut v: Value =
            serde_json::from_str(&text).map_err(|e| DmpcError::Scenario(format!("{}: invalid JSON: {e}", path.display())))?;
        for (k, val) in overrides {
            apply_override(&mut v, k, val)?;
        }
        let sc = Self::from_value(v)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn starts(&self) -> Vec<AgentState<f64>> {
        self.agents.iter().map(|a| AgentState::from_array(a.start)).collect()
    }

    pub fn goals(&self) -> Vec<AgentState<f64>> {
        self.agents.iter().map(|a| AgentState::from_array(a.goal)).collect()
    }

    pub fn graph(&self) -> Result<InteractionGraph> {
        let n = self.agents.len();
        match &self.graph {
            GraphSpec::Kind(GraphKind::Complete) => Ok(InteractionGraph::complete(n)),
            GraphSpec::Kind(GraphKind::Empty) => Ok(InteractionGraph::empty(n)),
            GraphSpec::Edges { edges } => {
                let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                InteractionGraph::from_edges(n, &pairs).map_err(|e| DmpcError::Scenario(format!("graph: {e}")))
            }
        }
    }

    /// Explicit obstacles followed by the seeded random ones.
    pub fn resolved_obstacles(&self) -> Result<Vec<Obstacle<f64>>> {
        let mut out: Vec<Obstacle<f64>> = self.obstacles.iter().map(|c| Obstacle::new(c[0], c[1])).collect();
        let Some(r) = self.random_obstacles else {
            return Ok(out);
        };
        if !(r.x[0] <= r.x[1] && r.y[0] <= r.y[1]) || !(r.clearance >= 0.0) {
            return Err(DmpcError::Scenario("random_obstacles: empty box or negative clearance".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let anchors: Vec<[f64; 2]> =
            self.agents.iter().flat_map(|a| [[a.start[0], a.start[1]], [a.goal[0], a.goal[1]]]).collect();
        let mut placed = 0;
        let mut attempts = 0;
        while placed < r.count {
            attempts += 1;
            if attempts > 100_000 {
                return Err(DmpcError::Scenario(format!(
                    "random_obstacles: could only place {placed} of {} with clearance {}",
                    r.count, r.clearance
                )));
            }
            let c = [rng.gen_range(r.x[0]..=r.x[1]), rng.gen_range(r.y[0]..=r.y[1])];
            let far = |p: &[f64; 2]| (p[0] - c[0]).hypot(p[1] - c[1]) >= r.clearance;
            if anchors.iter().all(far) && out.iter().all(|o| far(&o.center)) {
                out.push(Obstacle::new(c[0], c[1]));
                placed += 1;
            }
        }
        Ok(out)
    }

    pub fn planner_config(&self) -> PlannerConfig<f64> {
        let w = &self.weights;
        let z = 0.0;
        PlannerConfig {
            horizon: self.horizon,
            ts: self.ts,
            weights: CostWeights {
                q: [[w.q[0], z, z], [z, w.q[1], z], [z, z, w.q[2]]],
                r: [[w.r[0], z], [z, w.r[1]]],
                p: [[w.p[0], z, z], [z, w.p[1], z], [z, z, w.p[2]]],
                phi: w.phi,
            },
            bounds: InputBounds { v: self.bounds.v, omega: self.bounds.omega },
            safety: SafetyParams { d_th: self.safety.d_th, alpha_slope: self.safety.alpha },
            obstacle_activation_radius: self.obstacle_activation_radius,
            edge_activation_radius: self.edge_activation_radius,
            edge_cbf: self.edge_cbf,
        }
    }

    pub fn admm_config(&self) -> AdmmConfig<f64> {
        AdmmConfig {
            rho: self.admm.rho,
            max_iter: self.admm.max_iter,
            residual_stop: self.admm.residual_stop.map(|[p, d]| (p, d)),
            reset_duals_each_cycle: self.admm.reset_duals_each_cycle,
        }
    }

    pub fn qp_settings(&self) -> QpSettings<f64> {
        QpSettings {
            eps_abs: self.qp.eps_abs,
            eps_rel: self.qp.eps_rel,
            max_iter: self.qp.max_iter,
            polish: self.qp.polish,
            ..QpSettings::default()
        }
    }

    /// Every schema and invariant problem, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.agents.len();
        if n == 0 {
            out.push("agents: at least one agent is required".to_string());
        }
        if self.duration == 0 {
            out.push("duration: must be >= 1 cycle".to_string());
        }
        if let Err(e) = self.planner_config().validate() {
            out.push(format!("planner: {e}"));
        }
        if let Err(e) = self.admm_config().validate() {
            out.push(format!("admm: {e}"));
        }
        if let Err(e) = self.qp_settings().validate() {
            out.push(format!("qp: {e}"));
        }
        if let Err(e) = self.graph() {
            out.push(e.to_string());
        }
        if self.reference_speed.is_some_and(|v| !(v > 0.0) || !v.is_finite()) {
            out.push("reference_speed: must be positive".to_string());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.start.iter().chain(&a.goal).any(|v| !v.is_finite()) {
                out.push(format!("agents.{i}: start and goal must be finite"));
            }
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if o.iter().any(|v| !v.is_finite()) {
                out.push(format!("obstacles.{k}: center must be finite"));
            }
        }
        for (k, p) in self.disturbances.iter().enumerate() {
            if p.agent >= n {
                out.push(format!("disturbances.{k}: agent {} does not exist", p.agent));
            }
            if p.start_cycle > p.end_cycle {
                out.push(format!("disturbances.{k}: start_cycle after end_cycle"));
            }
            if p.delta.iter().any(|v| !v.is_finite()) {
                out.push(format!("disturbances.{k}: delta must be finite"));
            }
        }
        let d_th = self.safety.d_th;
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (self.agents[i].start, self.agents[j].start);
                let d = (a[0] - b[0]).hypot(a[1] - b[1]);
                if !(d >= d_th) {
                    out.push(format!("agents {i} and {j} start {d:.3} m apart, closer than d_th = {d_th}"));
                }
            }
        }
        match self.resolved_obstacles() {
            Err(e) => out.push(e.to_string()),
            Ok(obs) => {
                for (i, a) in self.agents.iter().enumerate() {
                    for (k, o) in obs.iter().enumerate() {
                        let d = (a.start[0] - o.center[0]).hypot(a.start[1] - o.center[1]);
                        if !(d >= d_th) {
                            out.push(format!("agent {i} starts {d:.3} m from obstacle {k}, closer than d_th = {d_th}"));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(DmpcError::Scenario(p.join("; ")))
        }
    }
}
