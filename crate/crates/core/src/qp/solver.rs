//! Operator-splitting QP solver.
//!
//! The problem is recast as `min ½xᵀPx + qᵀx  s.t. l ≤ Ax ≤ u` with equality,
//! inequality and bound rows stacked into `A`, Ruiz-equilibrated, and solved by
//! over-relaxed ADMM on the quasi-definite KKT system
//! `[P + σI, Aᵀ; A, −diag(ρ)⁻¹]`. The step size is rebalanced from the ratio of
//! primal and dual residuals, and a final polishing step solves the KKT system
//! of the guessed active set exactly.

use serde::{Deserialize, Serialize};

use super::ldl::EnvelopeLdl;
use super::problem::QpProblem;
use super::sparse::CsrMatrix;
use crate::error::{DmpcError, Result};
use crate::scalar::{norm_inf, Real};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const SCALING_NORM_MIN: f64 = 1e-4;
const SCALING_NORM_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
#[serde(default)]
pub struct QpSettings<T> {
    pub eps_abs: T,
    pub eps_rel: T,
    pub eps_prim_inf: T,
    pub max_iter: usize,
    pub rho: T,
    pub sigma: T,
    /// Over-relaxation parameter in `(0, 2)`.
    pub alpha: T,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub adaptive_rho_tolerance: T,
    pub scaling_iters: usize,
    pub polish: bool,
    pub polish_delta: T,
    pub polish_refine_iters: usize,
    #[serde(skip)]
    pub warm_start: Option<Vec<T>>,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            eps_abs: T::lit(1e-6),
            eps_rel: T::lit(1e-6),
            eps_prim_inf: T::lit(1e-4),
            max_iter: 200,
            rho: T::lit(0.1),
            sigma: T::lit(1e-6),
            alpha: T::lit(1.6),
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: T::lit(5.0),
            scaling_iters: 10,
            polish: true,
            polish_delta: T::lit(1e-7),
            polish_refine_iters: 3,
            warm_start: None,
        }
    }
}

impl<T: Real> QpSettings<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !pos(self.eps_abs) || !pos(self.eps_rel) || !pos(self.eps_prim_inf) {
            return Err(DmpcError::InvalidArgument("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(DmpcError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !pos(self.rho) || !pos(self.sigma) {
            return Err(DmpcError::InvalidArgument("rho and sigma must be positive".into()));
        }
        if !(self.alpha > T::zero() && self.alpha < T::lit(2.0)) {
            return Err(DmpcError::InvalidArgument("alpha must lie in (0, 2)".into()));
        }
        if self.adaptive_rho_interval == 0 {
            return Err(DmpcError::InvalidArgument("adaptive rho interval must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

/// Solver output. Multipliers follow the convention
/// `H x + f + A_eqᵀ y_eq + A_inᵀ y_in + y_bound = 0`, so active `≥` rows and
/// active lower bounds carry non-positive multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    pub y_eq: Vec<T>,
    pub y_in: Vec<T>,
    pub y_bound: Vec<T>,
    pub status: QpStatus,
    /// Largest equality, inequality or bound violation.
    pub primal_residual: T,
    /// `‖H x + f + Aᵀ y‖∞`.
    pub dual_residual: T,
    pub objective: T,
    pub iterations: usize,
    pub polished: bool,
}

impl<T: Real> QpSolution<T> {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }

    /// All multipliers stacked as `[y_eq, y_in, y_bound]`.
    pub fn stacked_duals(&self) -> Vec<T> {
        let mut y = self.y_eq.clone();
        y.extend_from_slice(&self.y_in);
        y.extend_from_slice(&self.y_bound);
        y
    }
}

/// One-shot solve.
pub fn solve<T: Real>(problem: &QpProblem<T>, settings: &QpSettings<T>) -> Result<QpSolution<T>> {
    let mut solver = QpSolver::new(problem, settings.clone())?;
    Ok(solver.solve())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

/// Reusable solver workspace. The factorization survives linear-cost updates,
/// and the last iterate is kept as the warm start of the next [`solve`](Self::solve).
#[derive(Debug, Clone)]
pub struct QpSolver<T> {
    settings: QpSettings<T>,
    problem: QpProblem<T>,
    n: usize,
    m: usize,
    m_eq: usize,
    m_in: usize,
    bound_vars: Vec<usize>,
    // scaled data
    p: CsrMatrix<T>,
    q: Vec<T>,
    a: CsrMatrix<T>,
    at: CsrMatrix<T>,
    l: Vec<T>,
    u: Vec<T>,
    d: Vec<T>,
    e: Vec<T>,
    c: T,
    kinds: Vec<RowKind>,
    rho: T,
    rho_vec: Vec<T>,
    kkt: EnvelopeLdl<T>,
    // scaled iterates
    x: Vec<T>,
    z: Vec<T>,
    y: Vec<T>,
    work: Vec<T>,
}

struct Residuals<T> {
    /// ADMM consensus residual `‖Ax − z‖∞` (unscaled).
    admm_prim: T,
    violation: T,
    dual: T,
    eps_dual: T,
    /// Normalized residual ratio used for step-size balancing.
    prim_rel: T,
    dual_rel: T,
}

impl<T: Real> QpSolver<T> {
    pub fn new(problem: &QpProblem<T>, settings: QpSettings<T>) -> Result<Self> {
        settings.validate()?;
        problem.check_psd()?;
        let n = problem.dim();
        let m_eq = problem.num_eq();
        let m_in = problem.num_in();
        let (lbv, ubv) = (problem.lb(), problem.ub());
        let bound_vars: Vec<usize> = match (lbv, ubv) {
            (Some(lb), Some(ub)) => (0..n)
                .filter(|&i| lb[i].is_finite() || ub[i].is_finite())
                .collect(),
            _ => Vec::new(),
        };
        let bound_rows = CsrMatrix::from_triplets(
            bound_vars.len(),
            n,
            &bound_vars.iter().enumerate().map(|(r, &c)| (r, c, T::one())).collect::<Vec<_>>(),
        );
        let mut a = CsrMatrix::vstack(&[problem.a_eq(), problem.a_in(), &bound_rows]);
        let m = a.nrows();
        let mut l = Vec::with_capacity(m);
        let mut u = Vec::with_capacity(m);
        l.extend_from_slice(problem.b_eq());
        u.extend_from_slice(problem.b_eq());
        l.extend_from_slice(problem.b_in());
        u.extend(std::iter::repeat(T::infinity()).take(m_in));
        for &i in &bound_vars {
            l.push(lbv.unwrap()[i]);
            u.push(ubv.unwrap()[i]);
        }
        let mut p = problem.h().clone();
        let mut q = problem.f().to_vec();

        // Ruiz equilibration of [P Aᵀ; A 0] plus cost scaling.
        let mut d = vec![T::one(); n];
        let mut e = vec![T::one(); m];
        let mut c = T::one();
        let clamp = |v: T| v.max(T::lit(SCALING_NORM_MIN)).min(T::lit(SCALING_NORM_MAX));
        let mut colp = vec![T::zero(); n];
        let mut cola = vec![T::zero(); n];
        for _ in 0..settings.scaling_iters {
            colp.iter_mut().for_each(|v| *v = T::zero());
            cola.iter_mut().for_each(|v| *v = T::zero());
            p.col_norms_inf(&mut colp);
            a.col_norms_inf(&mut cola);
            let dd: Vec<T> = colp
                .iter()
                .zip(&cola)
                .map(|(x, y)| {
                    let v = x.max(*y);
                    if v == T::zero() { T::one() } else { T::one() / clamp(v).sqrt() }
                })
                .collect();
            let de: Vec<T> = (0..m)
                .map(|r| {
                    let v = a.row_norm_inf(r);
                    if v == T::zero() { T::one() } else { T::one() / clamp(v).sqrt() }
                })
                .collect();
            p.scale(&dd, &dd);
            a.scale(&de, &dd);
            for i in 0..n {
                q[i] *= dd[i];
                d[i] *= dd[i];
            }
            for r in 0..m {
                e[r] *= de[r];
            }
            colp.iter_mut().for_each(|v| *v = T::zero());
            p.col_norms_inf(&mut colp);
            let mean = if n > 0 {
                colp.iter().copied().sum::<T>() / T::from_usize(n).unwrap()
            } else {
                T::one()
            };
            let qn = norm_inf(&q);
            let denom = clamp(mean.max(qn));
            let gamma = T::one() / denom;
            p.values_mut().iter_mut().for_each(|v| *v *= gamma);
            q.iter_mut().for_each(|v| *v *= gamma);
            c *= gamma;
        }
        for r in 0..m {
            if l[r].is_finite() {
                l[r] *= e[r];
            }
            if u[r].is_finite() {
                u[r] *= e[r];
            }
        }
        let at = a.transpose();
        let kinds: Vec<RowKind> = (0..m)
            .map(|r| {
                if !l[r].is_finite() && !u[r].is_finite() {
                    RowKind::Free
                } else if l[r] == u[r] {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect();
        let rho = settings.rho;
        let rho_vec = rho_vector(&kinds, rho);
        let kkt_entries = kkt_lower(&p, &a, settings.sigma, &rho_vec);
        let kkt = EnvelopeLdl::new(n + m, &kkt_entries)?;

        let mut solver = Self {
            settings,
            problem: problem.clone(),
            n,
            m,
            m_eq,
            m_in,
            bound_vars,
            p,
            q,
            a,
            at,
            l,
            u,
            d,
            e,
            c,
            kinds,
            rho,
            rho_vec,
            kkt,
            x: vec![T::zero(); n],
            z: vec![T::zero(); m],
            y: vec![T::zero(); m],
            work: Vec::new(),
        };
        if let Some(x0) = solver.settings.warm_start.clone() {
            solver.warm_start(Some(&x0), None)?;
        }
        Ok(solver)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn problem(&self) -> &QpProblem<T> {
        &self.problem
    }

    /// Replaces the linear cost; the factorization is kept.
    pub fn update_linear_cost(&mut self, f: &[T]) -> Result<()> {
        if f.len() != self.n {
            return Err(DmpcError::Dimension("linear cost length".into()));
        }
        self.problem.set_linear_cost(f.to_vec())?;
        for i in 0..self.n {
            self.q[i] = self.c * self.d[i] * f[i];
        }
        Ok(())
    }

    /// Sets the starting primal point (and optionally the stacked multipliers
    /// `[y_eq, y_in, y_bound]`).
    pub fn warm_start(&mut self, x: Option<&[T]>, y: Option<&[T]>) -> Result<()> {
        if let Some(x) = x {
            if x.len() != self.n {
                return Err(DmpcError::Dimension("warm start length".into()));
            }
            for i in 0..self.n {
                self.x[i] = x[i] / self.d[i];
            }
            let mut ax = vec![T::zero(); self.m];
            self.a.mul_vec(&self.x, &mut ax);
            for r in 0..self.m {
                self.z[r] = ax[r].max(self.l[r]).min(self.u[r]);
            }
        }
        match y {
            Some(y) => {
                if y.len() != self.m_eq + self.m_in + self.n {
                    return Err(DmpcError::Dimension("dual warm start length".into()));
                }
                let bound_off = self.m_eq + self.m_in;
                for r in 0..self.m {
                    let src = if r < bound_off { y[r] } else { y[bound_off + self.bound_vars[r - bound_off]] };
                    self.y[r] = src * self.c / self.e[r];
                }
            }
            None if x.is_some() => self.y.iter_mut().for_each(|v| *v = T::zero()),
            None => {}
        }
        Ok(())
    }

    fn set_rho(&mut self, rho: T) -> Result<()> {
        self.rho = rho.max(T::lit(RHO_MIN)).min(T::lit(RHO_MAX));
        self.rho_vec = rho_vector(&self.kinds, self.rho);
        let entries = kkt_lower(&self.p, &self.a, self.settings.sigma, &self.rho_vec);
        self.kkt.refactor(&entries)
    }

    fn residuals(&self, x: &[T], z: &[T], y: &[T]) -> Residuals<T> {
        let (n, m) = (self.n, self.m);
        let mut ax = vec![T::zero(); m];
        self.a.mul_vec(x, &mut ax);
        let mut px = vec![T::zero(); n];
        self.p.mul_vec(x, &mut px);
        let mut aty = vec![T::zero(); n];
        self.at.mul_vec(y, &mut aty);

        let mut admm_prim = T::zero();
        let mut violation = T::zero();
        let mut ax_n = T::zero();
        let mut z_n = T::zero();
        let mut ax_s = T::zero();
        let mut z_s = T::zero();
        let mut r_s = T::zero();
        for r in 0..m {
            let einv = T::one() / self.e[r];
            let axr = ax[r] * einv;
            let zr = z[r] * einv;
            admm_prim = admm_prim.max((axr - zr).abs());
            let lo = self.l[r] * einv;
            let hi = self.u[r] * einv;
            violation = violation.max(lo - axr).max(axr - hi);
            ax_n = ax_n.max(axr.abs());
            z_n = z_n.max(zr.abs());
            r_s = r_s.max((ax[r] - z[r]).abs());
            ax_s = ax_s.max(ax[r].abs());
            z_s = z_s.max(z[r].abs());
        }
        let cinv = T::one() / self.c;
        let mut dual = T::zero();
        let mut px_n = T::zero();
        let mut aty_n = T::zero();
        let mut q_n = T::zero();
        let mut d_s = T::zero();
        let mut px_s = T::zero();
        let mut aty_s = T::zero();
        let mut q_s = T::zero();
        for i in 0..n {
            let dinv = cinv / self.d[i];
            let g = px[i] + self.q[i] + aty[i];
            dual = dual.max((g * dinv).abs());
            px_n = px_n.max((px[i] * dinv).abs());
            aty_n = aty_n.max((aty[i] * dinv).abs());
            q_n = q_n.max((self.q[i] * dinv).abs());
            d_s = d_s.max(g.abs());
            px_s = px_s.max(px[i].abs());
            aty_s = aty_s.max(aty[i].abs());
            q_s = q_s.max(self.q[i].abs());
        }
        let _ = (ax_n, z_n);
        let eps_dual = self.settings.eps_abs + self.settings.eps_rel * px_n.max(aty_n).max(q_n);
        let tiny = T::lit(1e-30);
        Residuals {
            admm_prim,
            violation: violation.max(T::zero()),
            dual,
            eps_dual,
            prim_rel: r_s / ax_s.max(z_s).max(tiny),
            dual_rel: d_s / px_s.max(aty_s).max(q_s).max(tiny),
        }
    }

    fn converged(&self, r: &Residuals<T>) -> bool {
        r.violation <= self.settings.eps_abs
            && r.admm_prim <= self.settings.eps_abs + self.settings.eps_rel * T::one().max(r.violation)
            && r.dual <= r.eps_dual
    }

    fn primal_infeasible(&self, dy: &[T]) -> bool {
        let eps = self.settings.eps_prim_inf;
        let unscaled: Vec<T> = dy.iter().zip(&self.e).map(|(v, e)| *v * *e / self.c).collect();
        let norm = norm_inf(&unscaled);
        if norm <= eps {
            return false;
        }
        let mut lhs = T::zero();
        for r in 0..self.m {
            let v = unscaled[r] / norm;
            let einv = T::one() / self.e[r];
            if v > T::zero() {
                if !self.u[r].is_finite() {
                    if v > eps {
                        return false;
                    }
                } else {
                    lhs += self.u[r] * einv * v;
                }
            } else if v < T::zero() {
                if !self.l[r].is_finite() {
                    if -v > eps {
                        return false;
                    }
                } else {
                    lhs += self.l[r] * einv * v;
                }
            }
        }
        if lhs >= T::zero() {
            return false;
        }
        let scaled_dy: Vec<T> = dy.iter().map(|v| *v / (norm * self.c)).collect();
        let mut atdy = vec![T::zero(); self.n];
        self.at.mul_vec(&scaled_dy, &mut atdy);
        let worst = atdy
            .iter()
            .zip(&self.d)
            .fold(T::zero(), |acc, (g, d)| acc.max((*g / *d).abs()));
        worst < eps
    }

    pub fn solve(&mut self) -> QpSolution<T> {
        let (n, m) = (self.n, self.m);
        let s = self.settings.clone();
        let alpha = s.alpha;
        let one = T::one();
        let mut rhs = vec![T::zero(); n + m];
        let mut x_tilde = vec![T::zero(); n];
        let mut z_relax = vec![T::zero(); m];
        let mut y_prev = vec![T::zero(); m];
        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;
        let mut best: Option<(T, Vec<T>, Vec<T>, Vec<T>)> = None;

        for iter in 1..=s.max_iter {
            iterations = iter;
            for i in 0..n {
                rhs[i] = s.sigma * self.x[i] - self.q[i];
            }
            for r in 0..m {
                rhs[n + r] = self.z[r] - self.y[r] / self.rho_vec[r];
            }
            self.kkt.solve_in_place(&mut rhs, &mut self.work);
            x_tilde.copy_from_slice(&rhs[..n]);
            for r in 0..m {
                let zt = self.z[r] + (rhs[n + r] - self.y[r]) / self.rho_vec[r];
                z_relax[r] = alpha * zt + (one - alpha) * self.z[r];
            }
            for i in 0..n {
                self.x[i] = alpha * x_tilde[i] + (one - alpha) * self.x[i];
            }
            y_prev.copy_from_slice(&self.y);
            for r in 0..m {
                let znew = (z_relax[r] + self.y[r] / self.rho_vec[r])
                    .max(self.l[r])
                    .min(self.u[r]);
                self.y[r] += self.rho_vec[r] * (z_relax[r] - znew);
                self.z[r] = znew;
            }

            let res = self.residuals(&self.x, &self.z, &self.y);
            let score = (res.violation / s.eps_abs).max(res.dual / res.eps_dual);
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, self.x.clone(), self.z.clone(), self.y.clone()));
            }
            if self.converged(&res) {
                status = QpStatus::Solved;
                break;
            }
            let dy: Vec<T> = self.y.iter().zip(&y_prev).map(|(a, b)| *a - *b).collect();
            if self.primal_infeasible(&dy) {
                status = QpStatus::PrimalInfeasible;
                break;
            }
            if s.adaptive_rho && iter % s.adaptive_rho_interval == 0 && iter < s.max_iter {
                let ratio = (res.prim_rel / res.dual_rel.max(T::lit(1e-30))).sqrt();
                let new_rho = self.rho * ratio;
                if new_rho > self.rho * s.adaptive_rho_tolerance
                    || new_rho < self.rho / s.adaptive_rho_tolerance
                {
                    // A failed refactorization keeps the previous step size.
                    let old = self.rho;
                    if self.set_rho(new_rho).is_err() {
                        let _ = self.set_rho(old);
                    }
                }
            }
        }

        if status == QpStatus::MaxIter {
            if let Some((_, bx, bz, by)) = best.take() {
                self.x = bx;
                self.z = bz;
                self.y = by;
            }
        }

        let mut polished = false;
        if s.polish && status != QpStatus::PrimalInfeasible {
            if let Some((px, pz, py)) = self.polish() {
                let before = self.residuals(&self.x, &self.z, &self.y);
                let after = self.residuals(&px, &pz, &py);
                let ok = after.violation <= s.eps_abs && after.dual <= after.eps_dual;
                let better = after.violation <= before.violation && after.dual <= before.dual;
                if ok || better {
                    self.x = px;
                    self.z = pz;
                    self.y = py;
                    polished = true;
                    if ok {
                        status = QpStatus::Solved;
                    }
                }
            }
        }
        self.build_solution(status, iterations, polished)
    }

    fn build_solution(&self, status: QpStatus, iterations: usize, polished: bool) -> QpSolution<T> {
        let res = self.residuals(&self.x, &self.z, &self.y);
        let x: Vec<T> = self.x.iter().zip(&self.d).map(|(v, d)| *v * *d).collect();
        let y: Vec<T> = self
            .y
            .iter()
            .zip(&self.e)
            .map(|(v, e)| *v * *e / self.c)
            .collect();
        let y_eq = y[..self.m_eq].to_vec();
        let y_in = y[self.m_eq..self.m_eq + self.m_in].to_vec();
        let mut y_bound = vec![T::zero(); self.n];
        for (k, &var) in self.bound_vars.iter().enumerate() {
            y_bound[var] = y[self.m_eq + self.m_in + k];
        }
        QpSolution {
            objective: self.problem.objective(&x),
            x,
            y_eq,
            y_in,
            y_bound,
            status,
            primal_residual: res.violation,
            dual_residual: res.dual,
            iterations,
            polished,
        }
    }

    /// Exact solve of the KKT system on the active set guessed from the
    /// current iterate. Returns `None` when the guess is rejected.
    fn polish(&self) -> Option<(Vec<T>, Vec<T>, Vec<T>)> {
        let (n, m) = (self.n, self.m);
        let mut active: Vec<(usize, T, i8)> = Vec::new();
        for r in 0..m {
            match self.kinds[r] {
                RowKind::Free => {}
                RowKind::Equality => active.push((r, self.l[r], 0)),
                RowKind::Inequality => {
                    if self.z[r] - self.l[r] < -self.y[r] {
                        active.push((r, self.l[r], -1));
                    } else if self.u[r] - self.z[r] < self.y[r] {
                        active.push((r, self.u[r], 1));
                    }
                }
            }
        }
        let k = active.len();
        let delta = self.settings.polish_delta;
        let mut entries: Vec<(usize, usize, T)> = self
            .p
            .triplets()
            .into_iter()
            .filter(|(i, j, _)| i >= j)
            .collect();
        entries.extend((0..n).map(|i| (i, i, delta)));
        for (row, &(r, _, _)) in active.iter().enumerate() {
            for (c, v) in self.a.row(r) {
                entries.push((n + row, c, v));
            }
            entries.push((n + row, n + row, -delta));
        }
        let kkt = EnvelopeLdl::new(n + k, &entries).ok()?;
        let mut rhs = vec![T::zero(); n + k];
        for i in 0..n {
            rhs[i] = -self.q[i];
        }
        for (row, &(_, b, _)) in active.iter().enumerate() {
            rhs[n + row] = b;
        }
        let mut sol = kkt.solve(&rhs);
        // Iterative refinement against the unregularized system.
        for _ in 0..self.settings.polish_refine_iters {
            let mut resid = rhs.clone();
            let mut px = vec![T::zero(); n];
            self.p.mul_vec(&sol[..n], &mut px);
            for i in 0..n {
                resid[i] -= px[i];
            }
            for (row, &(r, _, _)) in active.iter().enumerate() {
                let yv = sol[n + row];
                let mut ax = T::zero();
                for (c, v) in self.a.row(r) {
                    resid[c] -= v * yv;
                    ax += v * sol[c];
                }
                resid[n + row] -= ax;
            }
            let corr = kkt.solve(&resid);
            for (s, c) in sol.iter_mut().zip(&corr) {
                *s += *c;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol[..n].to_vec();
        let mut y = vec![T::zero(); m];
        let sign_tol = self.settings.eps_abs;
        for (row, &(r, _, side)) in active.iter().enumerate() {
            let v = sol[n + row];
            let unscaled = v * self.e[r] / self.c;
            if (side < 0 && unscaled > sign_tol) || (side > 0 && unscaled < -sign_tol) {
                return None;
            }
            y[r] = v;
        }
        let mut z = vec![T::zero(); m];
        self.a.mul_vec(&x, &mut z);
        for r in 0..m {
            z[r] = z[r].max(self.l[r]).min(self.u[r]);
        }
        Some((x, z, y))
    }
}

fn rho_vector<T: Real>(kinds: &[RowKind], rho: T) -> Vec<T> {
    kinds
        .iter()
        .map(|k| match k {
            RowKind::Equality => rho * T::lit(RHO_EQ_SCALE),
            RowKind::Inequality => rho,
            RowKind::Free => T::lit(RHO_MIN),
        })
        .collect()
}

fn kkt_lower<T: Real>(p: &CsrMatrix<T>, a: &CsrMatrix<T>, sigma: T, rho: &[T]) -> Vec<(usize, usize, T)> {
    let n = p.nrows();
    let mut out: Vec<(usize, usize, T)> = p.triplets().into_iter().filter(|(i, j, _)| i >= j).collect();
    out.extend((0..n).map(|i| (i, i, sigma)));
    for (r, rv) in rho.iter().enumerate() {
        for (c, v) in a.row(r) {
            out.push((n + r, c, v));
        }
        out.push((n + r, n + r, -T::one() / *rv));
    }
    out
}
