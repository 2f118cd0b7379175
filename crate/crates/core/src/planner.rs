//! Builders for the per-agent local QPs, the pairwise edge QPs and the
//! centralized baseline QP.
//!
//! Every agent's decision vector `ξ` has the layout of
//! [`AgentTrajectory::flatten`]: `N` predicted states followed by `N` inputs.
//! The measured state is not a decision variable and enters through the
//! right-hand side of the first dynamics row. Headings inside a QP live in a
//! continuous frame anchored at the measured heading, so the operating point,
//! the reference and any warm start must be unwrapped consistently (see
//! [`OperatingPoint`] and [`align_reference`]).

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    linearize_raw, step_continuous_heading, AgentState, AgentTrajectory, ControlInput,
    ReferenceTrajectory, NU, NX, NXU,
};
use crate::error::{DmpcError, Result};
use crate::qp::{check_psd, CsrMatrix, QpProblem};
use crate::safety::{
    cbf_rows_interagent, cbf_rows_obstacle, AffineRow, DecisionLayout, Obstacle, SafetyParams,
};
use crate::scalar::Real;

/// Quadratic weights of the tracking cost and the slack penalty
/// `φ(s) = phi · ‖s‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CostWeights<T> {
    pub q: [[T; NX]; NX],
    pub r: [[T; NU]; NU],
    pub p: [[T; NX]; NX],
    pub phi: T,
}

fn diag3<T: Real>(d: [T; 3]) -> [[T; 3]; 3] {
    let z = T::zero();
    [[d[0], z, z], [z, d[1], z], [z, z, d[2]]]
}

impl<T: Real> CostWeights<T> {
    /// Diagonal weights with terminal weight `P = terminal_factor · Q`.
    pub fn diagonal(q: [T; 3], r: [T; 2], terminal_factor: T, phi: T) -> Self {
        let z = T::zero();
        Self {
            q: diag3(q),
            r: [[r[0], z], [z, r[1]]],
            p: diag3(q.map(|v| v * terminal_factor)),
            phi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn pd<T: Real, const K: usize>(m: &[[T; K]; K], name: &str) -> Result<()> {
            let mut lower = Vec::new();
            for i in 0..K {
                for j in 0..K {
                    if !m[i][j].is_finite() {
                        return Err(DmpcError::InvalidArgument(format!("{name} has non-finite entries")));
                    }
                    if (m[i][j] - m[j][i]).abs() > T::lit(1e-10) * (T::one() + m[i][j].abs()) {
                        return Err(DmpcError::InvalidArgument(format!("{name} is not symmetric")));
                    }
                    if i >= j && m[i][j] != T::zero() {
                        lower.push((i, j, m[i][j]));
                    }
                }
            }
            check_psd(K, &lower, T::zero())
                .map_err(|_| DmpcError::InvalidArgument(format!("{name} is not positive definite")))
        }
        pd(&self.q, "Q")?;
        pd(&self.r, "R")?;
        pd(&self.p, "P")?;
        if !(self.phi > T::zero()) || !self.phi.is_finite() {
            return Err(DmpcError::InvalidArgument("phi weight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CostWeights<f64> {
    /// `Q = diag(50, 50, 100)`, `R = diag(50, 10)`, `P = 10 Q`, `φ(s) = 5‖s‖²`.
    fn default() -> Self {
        Self::diagonal([50.0, 50.0, 100.0], [50.0, 10.0], 10.0, 5.0)
    }
}

/// Box constraints on the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InputBounds<T> {
    pub v: [T; 2],
    pub omega: [T; 2],
}

impl<T: Real> InputBounds<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("v", self.v), ("omega", self.omega)] {
            if lo.is_nan() || hi.is_nan() || lo > T::zero() || hi < T::zero() {
                return Err(DmpcError::InvalidArgument(format!(
                    "{name} bounds [{lo}, {hi}] must contain zero"
                )));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, u: &ControlInput<T>) -> ControlInput<T> {
        ControlInput::new(
            u.v.max(self.v[0]).min(self.v[1]),
            u.omega.max(self.omega[0]).min(self.omega[1]),
        )
    }

    pub fn contains(&self, u: &ControlInput<T>, tol: T) -> bool {
        u.v >= self.v[0] - tol
            && u.v <= self.v[1] + tol
            && u.omega >= self.omega[0] - tol
            && u.omega <= self.omega[1] + tol
    }
}

impl Default for InputBounds<f64> {
    fn default() -> Self {
        Self {
            v: [-0.8, 0.8],
            omega: [-1.5, 1.5],
        }
    }
}

/// Which horizon steps of the inter-agent barrier couple an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeCbfMode {
    /// One row and one slack per horizon step.
    #[default]
    AllSteps,
    /// A single row on the first predicted step.
    FirstStep,
}

impl EdgeCbfMode {
    pub fn steps(&self, horizon: usize) -> usize {
        match self {
            Self::AllSteps => horizon,
            Self::FirstStep => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig<T> {
    pub horizon: usize,
    pub ts: T,
    pub weights: CostWeights<T>,
    pub bounds: InputBounds<T>,
    pub safety: SafetyParams<T>,
    /// Obstacles farther than this from every operating position generate no
    /// rows; `None` keeps all of them.
    pub obstacle_activation_radius: Option<T>,
    /// Edge rows whose operating separations at both ends of the step exceed
    /// this are made vacuous; `None` keeps all of them.
    pub edge_activation_radius: Option<T>,
    pub edge_cbf: EdgeCbfMode,
}

impl<T: Real> PlannerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(DmpcError::InvalidArgument("horizon must be >= 1".into()));
        }
        if !(self.ts > T::zero()) || !self.ts.is_finite() {
            return Err(DmpcError::InvalidArgument("sampling time must be positive".into()));
        }
        self.weights.validate()?;
        self.bounds.validate()?;
        self.safety.validate()?;
        for r in [self.obstacle_activation_radius, self.edge_activation_radius].into_iter().flatten() {
            if !(r > T::zero()) {
                return Err(DmpcError::InvalidArgument("activation radius must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn xi_dim(&self) -> usize {
        self.horizon * NXU
    }
}

impl Default for PlannerConfig<f64> {
    fn default() -> Self {
        Self {
            horizon: 50,
            ts: 0.1,
            weights: CostWeights::default(),
            bounds: InputBounds::default(),
            safety: SafetyParams::default(),
            obstacle_activation_radius: Some(3.0),
            edge_activation_radius: Some(3.0),
            edge_cbf: EdgeCbfMode::AllSteps,
        }
    }
}

/// Linearization trajectory of one agent for one control cycle.
///
/// `traj.states` hold headings in the continuous frame that starts at
/// `x0.theta`, so they are not wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint<T: Real> {
    pub x0: AgentState<T>,
    pub traj: AgentTrajectory<T>,
    /// Positions the agent is heading for at steps `1..=N`. Only used to
    /// decide which barrier rows are active, so that a stationary operating
    /// point still sees what lies on its way.
    pub intent: Vec<[T; 2]>,
}

impl<T: Real> OperatingPoint<T> {
    /// Rolls the exact model out from `x0` under `inputs`.
    pub fn from_inputs(x0: AgentState<T>, inputs: Vec<ControlInput<T>>, ts: T) -> Result<Self> {
        if inputs.is_empty() {
            return Err(DmpcError::InvalidArgument("operating point needs inputs".into()));
        }
        if !x0.is_finite() || inputs.iter().any(|u| !u.is_finite()) {
            return Err(DmpcError::InvalidArgument("non-finite operating point".into()));
        }
        let mut x = x0.to_array();
        let mut states = Vec::with_capacity(inputs.len());
        for u in &inputs {
            x = step_continuous_heading(x, u, ts);
            states.push(AgentState { px: x[0], py: x[1], theta: x[2] });
        }
        Ok(Self {
            x0,
            traj: AgentTrajectory::new(states, inputs, 0)?,
            intent: Vec::new(),
        })
    }

    /// Rebuilds an operating point from a flattened trajectory without
    /// wrapping its headings.
    pub fn from_xi(x0: AgentState<T>, xi: &[T]) -> Result<Self> {
        if xi.is_empty() || xi.len() % NXU != 0 {
            return Err(DmpcError::Dimension(format!("operating trajectory length {}", xi.len())));
        }
        let n = xi.len() / NXU;
        let states = (0..n)
            .map(|k| AgentState { px: xi[NX * k], py: xi[NX * k + 1], theta: xi[NX * k + 2] })
            .collect();
        let inputs = (0..n)
            .map(|k| ControlInput::new(xi[NX * n + NU * k], xi[NX * n + NU * k + 1]))
            .collect();
        Ok(Self { x0, traj: AgentTrajectory::new(states, inputs, 0)?, intent: Vec::new() })
    }

    /// Attaches intended positions for steps `1..=N`.
    pub fn with_intent(mut self, intent: Vec<[T; 2]>) -> Result<Self> {
        if !intent.is_empty() && intent.len() != self.horizon() {
            return Err(DmpcError::Dimension(format!(
                "intent has {} positions, horizon is {}",
                intent.len(),
                self.horizon()
            )));
        }
        self.intent = intent;
        Ok(self)
    }

    /// Operating and intended positions at step `k` (`k = 0` is `x0`).
    fn positions(&self, k: usize) -> impl Iterator<Item = [T; 2]> + '_ {
        let own = if k == 0 { self.x0.position() } else { self.traj.states[k - 1].position() };
        std::iter::once(own).chain(if k == 0 { None } else { self.intent.get(k - 1).copied() })
    }

    pub fn horizon(&self) -> usize {
        self.traj.horizon()
    }

    /// Flattened operating trajectory.
    pub fn xi(&self) -> Vec<T> {
        self.traj.flatten()
    }
}

/// Feed-forward inputs that move along consecutive reference samples,
/// clamped to the bounds.
pub fn reference_inputs<T: Real>(
    reference: &ReferenceTrajectory<T>,
    ts: T,
    bounds: &InputBounds<T>,
) -> Vec<ControlInput<T>> {
    reference
        .samples
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let (s, c) = a.theta.sin_cos();
            let v = ((b.px - a.px) * c + (b.py - a.py) * s) / ts;
            let omega = crate::dynamics::wrap_angle(b.theta - a.theta) / ts;
            bounds.clamp(&ControlInput::new(v, omega))
        })
        .collect()
}

/// Shifts the wrapped reference headings into the continuous frame that starts
/// at `x0_theta`, so consecutive samples never jump by `2π`.
pub fn align_reference<T: Real>(reference: &ReferenceTrajectory<T>, x0_theta: T) -> Vec<[T; 3]> {
    let mut prev = x0_theta;
    reference
        .samples
        .iter()
        .map(|s| {
            let th = prev + crate::dynamics::wrap_angle(s.theta - prev);
            prev = th;
            [s.px, s.py, th]
        })
        .collect()
}

/// Agent-local QP without consensus terms. Its objective plus `constant` equals
/// the tracking cost `J(ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalQp<T: Real> {
    pub problem: QpProblem<T>,
    pub constant: T,
    /// Reference samples `1..=N` in the continuous heading frame.
    pub reference: Vec<[T; 3]>,
    /// Indices of obstacles that generated rows.
    pub active_obstacles: Vec<usize>,
    pub obstacle_rows: Vec<AffineRow<T>>,
}

fn quad3<T: Real>(w: &[[T; 3]; 3], e: [T; 3]) -> T {
    let mut acc = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            acc += e[i] * w[i][j] * e[j];
        }
    }
    acc
}

/// `Σ ‖x_k − x^des_k‖²_Q + ‖x_N − x^des_N‖²_P + Σ ‖u_k‖²_R` for a flattened
/// `ξ` against an aligned reference (samples `1..=N`).
pub fn tracking_cost<T: Real>(xi: &[T], reference: &[[T; 3]], weights: &CostWeights<T>) -> T {
    let n = reference.len();
    let mut acc = T::zero();
    for k in 0..n {
        let w = if k + 1 == n { &weights.p } else { &weights.q };
        let e = [
            xi[NX * k] - reference[k][0],
            xi[NX * k + 1] - reference[k][1],
            xi[NX * k + 2] - reference[k][2],
        ];
        acc += quad3(w, e);
        let u = [xi[NX * n + NU * k], xi[NX * n + NU * k + 1]];
        for i in 0..2 {
            for j in 0..2 {
                acc += u[i] * weights.r[i][j] * u[j];
            }
        }
    }
    acc
}

/// Builds the local tracking QP over `ξ` with the linearized dynamics, the
/// obstacle barrier rows and the input box.
pub fn build_local_qp<T: Real>(
    op: &OperatingPoint<T>,
    reference: &ReferenceTrajectory<T>,
    obstacles: &[Obstacle<T>],
    cfg: &PlannerConfig<T>,
) -> Result<LocalQp<T>> {
    let n = cfg.horizon;
    if op.horizon() != n {
        return Err(DmpcError::InvalidArgument(format!(
            "operating point horizon {} differs from configured horizon {n}",
            op.horizon()
        )));
    }
    if reference.samples.len() != n + 1 {
        return Err(DmpcError::InvalidArgument(format!(
            "reference has {} samples, expected {}",
            reference.samples.len(),
            n + 1
        )));
    }
    let dim = n * NXU;
    let layout = DecisionLayout::single(n);
    let aligned = align_reference(reference, op.x0.theta);
    let refs: Vec<[T; 3]> = aligned[1..].to_vec();

    let two = T::lit(2.0);
    let mut h = Vec::with_capacity(9 * n + 4 * n);
    let mut f = vec![T::zero(); dim];
    let mut constant = T::zero();
    for k in 1..=n {
        let w = if k == n { &cfg.weights.p } else { &cfg.weights.q };
        let r = refs[k - 1];
        for a in 0..3 {
            for b in 0..3 {
                if w[a][b] != T::zero() {
                    h.push((layout.state(k, a), layout.state(k, b), two * w[a][b]));
                    f[layout.state(k, a)] -= two * w[a][b] * r[b];
                }
            }
        }
        constant += quad3(w, r);
    }
    for k in 0..n {
        for a in 0..2 {
            for b in 0..2 {
                if cfg.weights.r[a][b] != T::zero() {
                    h.push((layout.input(k, a), layout.input(k, b), two * cfg.weights.r[a][b]));
                }
            }
        }
    }
    let h = CsrMatrix::from_triplets(dim, dim, &h);

    // x_{k+1} − A_k x_k − B_k u_k = c_k, with x_0 folded into the first rhs.
    let mut eq = Vec::with_capacity(n * 3 * 6);
    let mut beq = vec![T::zero(); n * NX];
    let mut x_bar = op.x0.to_array();
    for k in 0..n {
        let u_bar = op.traj.inputs[k];
        let jac = linearize_raw(x_bar, &u_bar, cfg.ts);
        for r in 0..NX {
            let row = NX * k + r;
            eq.push((row, layout.state(k + 1, r), T::one()));
            for c in 0..NU {
                eq.push((row, layout.input(k, c), -jac.b[r][c]));
            }
            if k == 0 {
                let x0 = op.x0.to_array();
                beq[row] = jac.c[r] + (0..NX).map(|c| jac.a[r][c] * x0[c]).sum::<T>();
            } else {
                for c in 0..NX {
                    eq.push((row, layout.state(k, c), -jac.a[r][c]));
                }
                beq[row] = jac.c[r];
            }
        }
        let s = &op.traj.states[k];
        x_bar = [s.px, s.py, s.theta];
    }
    let a_eq = CsrMatrix::from_triplets(n * NX, dim, &eq);

    let active_obstacles: Vec<usize> = obstacles
        .iter()
        .enumerate()
        .filter(|(_, o)| match cfg.obstacle_activation_radius {
            None => true,
            Some(radius) => (0..=n)
                .flat_map(|k| op.positions(k))
                .any(|p| (p[0] - o.center[0]).hypot(p[1] - o.center[1]) <= radius),
        })
        .map(|(i, _)| i)
        .collect();
    let active: Vec<Obstacle<T>> = active_obstacles.iter().map(|&i| obstacles[i]).collect();
    let obstacle_rows = cbf_rows_obstacle(&op.x0, &op.traj, &active, &cfg.safety, &layout)?;
    let (a_in, b_in) = rows_to_csr(&obstacle_rows, dim);

    let mut lb = vec![T::neg_infinity(); dim];
    let mut ub = vec![T::infinity(); dim];
    for k in 0..n {
        lb[layout.input(k, 0)] = cfg.bounds.v[0];
        ub[layout.input(k, 0)] = cfg.bounds.v[1];
        lb[layout.input(k, 1)] = cfg.bounds.omega[0];
        ub[layout.input(k, 1)] = cfg.bounds.omega[1];
    }
    let problem = QpProblem::new(h, f)?
        .with_equalities(a_eq, beq)?
        .with_inequalities(a_in, b_in)?
        .with_bounds(lb, ub)?;
    Ok(LocalQp {
        problem,
        constant,
        reference: refs,
        active_obstacles,
        obstacle_rows,
    })
}

fn rows_to_csr<T: Real>(rows: &[AffineRow<T>], dim: usize) -> (CsrMatrix<T>, Vec<T>) {
    let trip: Vec<(usize, usize, T)> = rows
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.coeffs.iter().map(move |(c, v)| (r, *c, *v)))
        .collect();
    (
        CsrMatrix::from_triplets(rows.len(), dim, &trip),
        rows.iter().map(|r| r.rhs).collect(),
    )
}

/// Node-update QP: the local QP plus `ρ/2 Σ_j ‖ξ − z_j + λ_j‖²` over
/// `degree` neighbors. Only the Hessian is set here; the linear part changes
/// every ADMM iteration (see [`consensus_linear_cost`]).
pub fn with_consensus_hessian<T: Real>(local: &QpProblem<T>, rho: T, degree: usize) -> Result<QpProblem<T>> {
    let n = local.dim();
    let mut trip = local.h().triplets();
    if degree > 0 {
        let w = rho * T::from_usize(degree).unwrap();
        trip.extend((0..n).map(|i| (i, i, w)));
    }
    let mut p = local.clone();
    p.h = CsrMatrix::from_triplets(n, n, &trip);
    Ok(p)
}

/// Linear cost of the node update: `f + ρ Σ_j (λ_j − z_j)`.
pub fn consensus_linear_cost<T: Real>(base: &[T], rho: T, terms: &[(&[T], &[T])]) -> Vec<T> {
    let mut f = base.to_vec();
    for (z, lambda) in terms {
        for i in 0..f.len() {
            f[i] += rho * (lambda[i] - z[i]);
        }
    }
    f
}

/// Coupling rows of one edge over the joint vector `[ξⁱ; ξʲ]`, written as
/// `coeffs · [ξⁱ; ξʲ] ≥ rhs` (so `ψ = rhs − coeffs·[ξⁱ; ξʲ]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet<T> {
    pub rows: Vec<AffineRow<T>>,
    pub slack_dim: usize,
    pub xi_dim: usize,
}

impl<T: Real> EdgeSet<T> {
    /// `coeffs·[ξⁱ; ξʲ] − rhs` for every row (the slack the equality implies).
    pub fn margins(&self, xi_i: &[T], xi_j: &[T]) -> Vec<T> {
        let n = self.xi_dim;
        self.rows
            .iter()
            .map(|r| {
                r.coeffs
                    .iter()
                    .map(|(c, v)| *v * if *c < n { xi_i[*c] } else { xi_j[*c - n] })
                    .sum::<T>()
                    - r.rhs
            })
            .collect()
    }

    /// Number of rows that constrain anything.
    pub fn active_rows(&self) -> usize {
        self.rows.iter().filter(|r| !r.coeffs.is_empty()).count()
    }

    /// Edge-QP variable count `2·N·5 + dim(s)`.
    pub fn qp_dim(&self) -> usize {
        2 * self.xi_dim + self.slack_dim
    }
}

/// Linearized inter-agent rows for edge `(i, j)` at the pair of operating
/// points.
pub fn build_edge_set<T: Real>(
    op_i: &OperatingPoint<T>,
    op_j: &OperatingPoint<T>,
    cfg: &PlannerConfig<T>,
) -> Result<EdgeSet<T>> {
    let n = cfg.horizon;
    if op_i.horizon() != n || op_j.horizon() != n {
        return Err(DmpcError::InvalidArgument("operating point horizon mismatch".into()));
    }
    let xi_dim = n * NXU;
    let li = DecisionLayout { horizon: n, offset: 0, dim: 2 * xi_dim };
    let lj = DecisionLayout { horizon: n, offset: xi_dim, dim: 2 * xi_dim };
    let steps = cfg.edge_cbf.steps(n);
    let mut rows = cbf_rows_interagent(&op_i.x0, &op_i.traj, &li, &op_j.x0, &op_j.traj, &lj, &cfg.safety, steps)?;
    if let Some(radius) = cfg.edge_activation_radius {
        // Closest pairing of operating and intended positions.
        let sep = |k: usize| -> T {
            let mut best = T::infinity();
            for a in op_i.positions(k) {
                for b in op_j.positions(k) {
                    best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
                }
            }
            best
        };
        for (k, row) in rows.iter_mut().enumerate() {
            if sep(k) > radius && sep(k + 1) > radius {
                *row = AffineRow::vacuous();
            }
        }
    }
    Ok(EdgeSet { slack_dim: rows.len(), rows, xi_dim })
}

/// Edge-update QP over `[z_i; z_j; s]`:
/// `min φ‖s‖² + ρ/2 ‖z_i − v_i‖² + ρ/2 ‖z_j − v_j‖²` subject to
/// `coeffs·[z_i; z_j] − s = rhs`, `s ≥ 0`, where `v = ξ_{p+1} + λ_p`.
pub fn build_edge_qp<T: Real>(set: &EdgeSet<T>, phi: T, rho: T, v_i: &[T], v_j: &[T]) -> Result<QpProblem<T>> {
    let n = set.xi_dim;
    let dim = set.qp_dim();
    let mut h = Vec::with_capacity(dim);
    h.extend((0..2 * n).map(|i| (i, i, rho)));
    h.extend((0..set.slack_dim).map(|k| (2 * n + k, 2 * n + k, T::lit(2.0) * phi)));
    let mut eq = Vec::new();
    for (k, row) in set.rows.iter().enumerate() {
        eq.extend(row.coeffs.iter().map(|(c, v)| (k, *c, *v)));
        eq.push((k, 2 * n + k, -T::one()));
    }
    let mut lb = vec![T::neg_infinity(); dim];
    let ub = vec![T::infinity(); dim];
    for k in 0..set.slack_dim {
        lb[2 * n + k] = T::zero();
    }
    QpProblem::new(CsrMatrix::from_triplets(dim, dim, &h), edge_linear_cost(rho, v_i, v_j, set.slack_dim))?
        .with_equalities(
            CsrMatrix::from_triplets(set.slack_dim, dim, &eq),
            set.rows.iter().map(|r| r.rhs).collect(),
        )?
        .with_bounds(lb, ub)
}

/// Linear cost `[−ρ v_i; −ρ v_j; 0]` of the edge QP.
pub fn edge_linear_cost<T: Real>(rho: T, v_i: &[T], v_j: &[T], slack_dim: usize) -> Vec<T> {
    let mut f: Vec<T> = v_i.iter().chain(v_j.iter()).map(|v| -rho * *v).collect();
    f.extend(std::iter::repeat(T::zero()).take(slack_dim));
    f
}

/// Stacked centralized QP over `[ξ¹ … ξⁿ, s^{e₁} …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedQp<T: Real> {
    pub problem: QpProblem<T>,
    /// Sum of the local constants: objective + constant = Σ J + Σ φ‖s‖².
    pub constant: T,
    pub xi_dim: usize,
    pub edges: Vec<(usize, usize)>,
    pub slack_offsets: Vec<usize>,
    pub edge_sets: Vec<EdgeSet<T>>,
}

impl<T: Real> CentralizedQp<T> {
    pub fn agent_offset(&self, agent: usize) -> usize {
        agent * self.xi_dim
    }

    pub fn agent_slice<'a>(&self, x: &'a [T], agent: usize) -> &'a [T] {
        &x[self.agent_offset(agent)..self.agent_offset(agent) + self.xi_dim]
    }
}

/// Stacks already-built local QPs and edge sets.
pub fn assemble_centralized<T: Real>(
    locals: &[LocalQp<T>],
    edges: &[(usize, usize)],
    edge_sets: Vec<EdgeSet<T>>,
    phi: T,
) -> Result<CentralizedQp<T>> {
    if locals.is_empty() {
        return Err(DmpcError::InvalidArgument("centralized QP needs at least one agent".into()));
    }
    if edges.len() != edge_sets.len() {
        return Err(DmpcError::InvalidArgument("one edge set per edge required".into()));
    }
    let xi_dim = locals[0].problem.dim();
    let n_agents = locals.len();
    let mut slack_offsets = Vec::with_capacity(edges.len());
    let mut dim = n_agents * xi_dim;
    for s in &edge_sets {
        slack_offsets.push(dim);
        dim += s.slack_dim;
    }
    let mut h = Vec::new();
    let mut f = vec![T::zero(); dim];
    let mut eq = Vec::new();
    let mut beq = Vec::new();
    let mut ineq = Vec::new();
    let mut bin = Vec::new();
    let mut lb = vec![T::neg_infinity(); dim];
    let mut ub = vec![T::infinity(); dim];
    let mut constant = T::zero();
    for (a, l) in locals.iter().enumerate() {
        let p = &l.problem;
        if p.dim() != xi_dim {
            return Err(DmpcError::Dimension("local QPs differ in dimension".into()));
        }
        let off = a * xi_dim;
        h.extend(p.h().triplets().into_iter().map(|(r, c, v)| (off + r, off + c, v)));
        f[off..off + xi_dim].copy_from_slice(p.f());
        let base = beq.len();
        eq.extend(p.a_eq().triplets().into_iter().map(|(r, c, v)| (base + r, off + c, v)));
        beq.extend_from_slice(p.b_eq());
        let base = bin.len();
        ineq.extend(p.a_in().triplets().into_iter().map(|(r, c, v)| (base + r, off + c, v)));
        bin.extend_from_slice(p.b_in());
        if let (Some(l), Some(u)) = (p.lb(), p.ub()) {
            lb[off..off + xi_dim].copy_from_slice(l);
            ub[off..off + xi_dim].copy_from_slice(u);
        }
        constant += l.constant;
    }
    for (e, (&(i, j), set)) in edges.iter().zip(&edge_sets).enumerate() {
        if i >= n_agents || j >= n_agents || set.xi_dim != xi_dim {
            return Err(DmpcError::Dimension(format!("edge ({i}, {j}) does not fit the agent set")));
        }
        let so = slack_offsets[e];
        for (k, row) in set.rows.iter().enumerate() {
            let r = beq.len();
            for (c, v) in &row.coeffs {
                let col = if *c < xi_dim { i * xi_dim + c } else { j * xi_dim + (c - xi_dim) };
                eq.push((r, col, *v));
            }
            eq.push((r, so + k, -T::one()));
            beq.push(row.rhs);
            h.push((so + k, so + k, T::lit(2.0) * phi));
            lb[so + k] = T::zero();
        }
    }
    let problem = QpProblem::new(CsrMatrix::from_triplets(dim, dim, &h), f)?
        .with_equalities(CsrMatrix::from_triplets(beq.len(), dim, &eq), beq)?
        .with_inequalities(CsrMatrix::from_triplets(bin.len(), dim, &ineq), bin)?
        .with_bounds(lb, ub)?;
    Ok(CentralizedQp {
        problem,
        constant,
        xi_dim,
        edges: edges.to_vec(),
        slack_offsets,
        edge_sets,
    })
}

/// Builds every local QP and edge set, then stacks them.
pub fn build_centralized_qp<T: Real>(
    ops: &[OperatingPoint<T>],
    references: &[ReferenceTrajectory<T>],
    obstacles: &[Obstacle<T>],
    edges: &[(usize, usize)],
    cfg: &PlannerConfig<T>,
) -> Result<CentralizedQp<T>> {
    if ops.len() != references.len() {
        return Err(DmpcError::InvalidArgument("one reference per agent required".into()));
    }
    let locals = ops
        .iter()
        .zip(references)
        .map(|(op, r)| build_local_qp(op, r, obstacles, cfg))
        .collect::<Result<Vec<_>>>()?;
    let sets = edges
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (ops.get(i), ops.get(j));
            match (a, b) {
                (Some(a), Some(b)) => build_edge_set(a, b, cfg),
                _ => Err(DmpcError::InvalidArgument(format!("edge ({i}, {j}) names a missing agent"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_centralized(&locals, edges, sets, cfg.weights.phi)
}

/// Fallback after a failed node QP: the previous plan shifted by one step with
/// its final input repeated at half speed, rolled out from `x0`. Without a
/// previous plan, a zero-input hold.
pub fn fallback_plan<T: Real>(
    last: Option<&AgentTrajectory<T>>,
    x0: &AgentState<T>,
    horizon: usize,
    ts: T,
    stamp: usize,
) -> Result<AgentTrajectory<T>> {
    let Some(last) = last else {
        return Ok(AgentTrajectory::hold(*x0, horizon, stamp));
    };
    if last.horizon() != horizon {
        return Err(DmpcError::Dimension("previous plan horizon differs".into()));
    }
    let mut inputs = last.inputs[1..].to_vec();
    let fin = *last.inputs.last().expect("non-empty plan");
    inputs.push(ControlInput::new(fin.v * T::lit(0.5), fin.omega));
    let states = crate::dynamics::rollout(x0, &inputs, ts)?;
    AgentTrajectory::new(states, inputs, stamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::bezier_reference;
    use crate::qp::{solve, QpSettings};
    use approx::assert_abs_diff_eq;

    fn cfg(n: usize) -> PlannerConfig<f64> {
        PlannerConfig { horizon: n, ..PlannerConfig::default() }
    }

    #[test]
    fn zero_reference_gives_zero_plan() {
        let c = cfg(10);
        let x0 = AgentState::new(0.0, 0.0, 0.0);
        let reference = ReferenceTrajectory { samples: vec![x0; 11] };
        let op = OperatingPoint::from_inputs(x0, vec![ControlInput::zero(); 10], c.ts).unwrap();
        let local = build_local_qp(&op, &reference, &[], &c).unwrap();
        assert_eq!(local.problem.dim(), 50);
        let sol = solve(&local.problem, &QpSettings::default()).unwrap();
        assert!(sol.is_solved());
        assert!(sol.x.iter().all(|v| v.abs() < 1e-9));
        assert_abs_diff_eq!(sol.objective + local.constant, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn one_step_cost_matches_hand_expansion() {
        let c = cfg(1);
        let x0 = AgentState::new(0.0, 0.0, 0.0);
        let reference = ReferenceTrajectory { samples: vec![x0, AgentState::new(1.0, 0.0, 0.0)] };
        let op = OperatingPoint::from_inputs(x0, vec![ControlInput::zero()], c.ts).unwrap();
        let local = build_local_qp(&op, &reference, &[], &c).unwrap();
        // N = 1: the only state is terminal, weighted by P = 10 Q.
        let xi = [0.3, 0.2, 0.1, 0.5, -0.4];
        let by_hand = 500.0 * (0.3f64 - 1.0).powi(2) + 500.0 * 0.2f64.powi(2) + 1000.0 * 0.1f64.powi(2)
            + 50.0 * 0.25
            + 10.0 * 0.16;
        assert_abs_diff_eq!(local.problem.objective(&xi) + local.constant, by_hand, epsilon = 1e-9);
        assert_abs_diff_eq!(tracking_cost(&xi, &local.reference, &c.weights), by_hand, epsilon = 1e-9);
    }

    #[test]
    fn linearized_rollouts_satisfy_dynamics_rows() {
        let c = cfg(8);
        let x0 = AgentState::new(0.2, -0.1, 3.0);
        let inputs: Vec<_> = (0..8).map(|k| ControlInput::new(0.5, 0.3 - 0.05 * k as f64)).collect();
        let op = OperatingPoint::from_inputs(x0, inputs.clone(), c.ts).unwrap();
        let reference = bezier_reference(&x0, &AgentState::new(2.0, 1.0, 0.0), 8).unwrap();
        let local = build_local_qp(&op, &reference, &[], &c).unwrap();
        // Roll the affine model out under perturbed inputs.
        let mut xs = Vec::new();
        let mut x = x0.to_array();
        let pert: Vec<_> = inputs.iter().map(|u| ControlInput::new(u.v + 0.1, u.omega - 0.2)).collect();
        for (k, u) in pert.iter().enumerate() {
            let base = if k == 0 { x0.to_array() } else { op.traj.states[k - 1].to_array() };
            let jac = linearize_raw(base, &op.traj.inputs[k], c.ts);
            x = jac.apply(x, u);
            xs.push(x);
        }
        let mut xi: Vec<f64> = xs.iter().flatten().copied().collect();
        xi.extend(pert.iter().flat_map(|u| [u.v, u.omega]));
        let p = &local.problem;
        let mut r = vec![0.0; p.num_eq()];
        p.a_eq().mul_vec(&xi, &mut r);
        for (a, b) in r.iter().zip(p.b_eq()) {
            assert!((a - b).abs() <= 1e-12, "{}", a - b);
        }
    }

    #[test]
    fn operating_point_satisfies_its_own_linearization_across_the_wrap() {
        let c = cfg(20);
        let x0 = AgentState::new(0.0, 0.0, 3.1);
        let op = OperatingPoint::from_inputs(x0, vec![ControlInput::new(0.6, 1.2); 20], c.ts).unwrap();
        assert!(op.traj.states.last().unwrap().theta > std::f64::consts::PI);
        let reference = bezier_reference(&x0, &AgentState::new(-1.0, 0.0, -3.0), 20).unwrap();
        let local = build_local_qp(&op, &reference, &[], &c).unwrap();
        let xi = op.xi();
        let mut r = vec![0.0; local.problem.num_eq()];
        local.problem.a_eq().mul_vec(&xi, &mut r);
        for (a, b) in r.iter().zip(local.problem.b_eq()) {
            assert!((a - b).abs() <= 1e-12);
        }
        // The aligned reference never jumps by 2π.
        for w in local.reference.windows(2) {
            assert!((w[1][2] - w[0][2]).abs() < 1.0);
        }
    }

    #[test]
    fn full_size_problems() {
        let c = PlannerConfig::default();
        let x0 = AgentState::new(-2.0, 0.0, 0.0);
        let xj = AgentState::new(2.0, 0.0, std::f64::consts::PI);
        let opi = OperatingPoint::from_inputs(x0, vec![ControlInput::new(0.5, 0.0); 50], c.ts).unwrap();
        let opj = OperatingPoint::from_inputs(xj, vec![ControlInput::new(0.5, 0.0); 50], c.ts).unwrap();
        let reference = bezier_reference(&x0, &xj, 50).unwrap();
        assert_eq!(build_local_qp(&opi, &reference, &[], &c).unwrap().problem.dim(), 250);
        assert_eq!(build_edge_set(&opi, &opj, &c).unwrap().qp_dim(), 550);
        let first = PlannerConfig { edge_cbf: EdgeCbfMode::FirstStep, ..c };
        assert_eq!(build_edge_set(&opi, &opj, &first).unwrap().qp_dim(), 501);
    }

    #[test]
    fn edge_rows_are_exact_at_the_operating_point() {
        let c = PlannerConfig { edge_activation_radius: None, ..cfg(10) };
        let opi = OperatingPoint::from_inputs(AgentState::new(0.0, 0.0, 0.0), vec![ControlInput::new(0.4, 0.1); 10], c.ts)
            .unwrap();
        let opj = OperatingPoint::from_inputs(AgentState::new(1.5, 0.2, 3.0), vec![ControlInput::new(0.3, -0.2); 10], c.ts)
            .unwrap();
        let set = build_edge_set(&opi, &opj, &c).unwrap();
        let margins = set.margins(&opi.xi(), &opj.xi());
        let q = c.safety.retention();
        let h = |k: usize| {
            let (a, b) = if k == 0 { (opi.x0, opj.x0) } else { (opi.traj.states[k - 1], opj.traj.states[k - 1]) };
            (a.px - b.px).hypot(a.py - b.py) - c.safety.d_th
        };
        for (k, m) in margins.iter().enumerate() {
            assert!((m - (h(k + 1) - q * h(k))).abs() <= 1e-12);
        }
    }

    #[test]
    fn distant_edges_are_vacuous() {
        let c = cfg(10);
        let opi = OperatingPoint::from_inputs(AgentState::new(0.0, 0.0, 0.0), vec![ControlInput::zero(); 10], c.ts).unwrap();
        let opj = OperatingPoint::from_inputs(AgentState::new(10.0, 0.0, 0.0), vec![ControlInput::zero(); 10], c.ts).unwrap();
        let set = build_edge_set(&opi, &opj, &c).unwrap();
        assert_eq!(set.slack_dim, 10);
        assert_eq!(set.active_rows(), 0);
    }

    #[test]
    fn single_agent_centralized_equals_local() {
        let c = cfg(10);
        let x0 = AgentState::new(0.0, 0.0, 0.0);
        let goal = AgentState::new(1.0, 0.5, 0.0);
        let reference = bezier_reference(&x0, &goal, 10).unwrap();
        let op = OperatingPoint::from_inputs(x0, reference_inputs(&reference, c.ts, &c.bounds), c.ts).unwrap();
        let obstacles = [Obstacle::new(0.5, 0.6)];
        let local = build_local_qp(&op, &reference, &obstacles, &c).unwrap();
        let central = build_centralized_qp(&[op], &[reference], &obstacles, &[], &c).unwrap();
        assert_eq!(central.problem, local.problem);
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::<f64>::default().validate().is_ok());
        let mut w = CostWeights::<f64>::default();
        w.q[0][0] = -1.0;
        assert!(w.validate().is_err());
        let w = CostWeights { phi: 0.0, ..CostWeights::<f64>::default() };
        assert!(w.validate().is_err());
    }

    #[test]
    fn fallback_examples() {
        let x0 = AgentState::new(0.0, 0.0, 0.0);
        let zero = AgentTrajectory::hold(x0, 5, 0);
        let f = fallback_plan(Some(&zero), &x0, 5, 0.1, 1).unwrap();
        assert!(f.inputs.iter().all(|u| u.v == 0.0 && u.omega == 0.0));
        let states = crate::dynamics::rollout(&x0, &[ControlInput::new(0.8, 0.0); 5], 0.1).unwrap();
        let moving = AgentTrajectory::new(states, vec![ControlInput::new(0.8, 0.0); 5], 0).unwrap();
        let f = fallback_plan(Some(&moving), &x0, 5, 0.1, 1).unwrap();
        assert_eq!(f.inputs.last().unwrap().v, 0.4);
        assert!(f.inputs.iter().all(|u| InputBounds::default().contains(u, 0.0)));
        let none = fallback_plan(None, &x0, 5, 0.1, 1).unwrap();
        assert_eq!(none, AgentTrajectory::hold(x0, 5, 1));
    }
}
