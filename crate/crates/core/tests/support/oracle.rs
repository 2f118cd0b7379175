//! Brute-force active-set QP oracle: every subset of inequality rows is tried
//! as the active set, the equality-constrained KKT system is solved densely,
//! and the best primal- and dual-feasible point wins.

use nalgebra::{DMatrix, DVector};

pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Rows read `a_in x ≥ b_in`.
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

pub struct OracleSolution {
    pub x: DVector<f64>,
    pub objective: f64,
}

impl DenseQp {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }
}

pub fn solve_by_enumeration(qp: &DenseQp, tol: f64) -> Option<OracleSolution> {
    let n = qp.f.len();
    let m_eq = qp.b_eq.len();
    let m_in = qp.b_in.len();
    assert!(m_in <= 16, "enumeration is exponential");
    let mut best: Option<OracleSolution> = None;
    for mask in 0u32..(1u32 << m_in) {
        let active: Vec<usize> = (0..m_in).filter(|k| mask & (1 << k) != 0).collect();
        let k = m_eq + active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        for i in 0..n {
            rhs[i] = -qp.f[i];
        }
        let rows: Vec<(DVector<f64>, f64)> = (0..m_eq)
            .map(|r| (qp.a_eq.row(r).transpose(), qp.b_eq[r]))
            .chain(active.iter().map(|&r| (qp.a_in.row(r).transpose(), qp.b_in[r])))
            .collect();
        for (idx, (a, b)) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + idx, c)] = a[c];
                kkt[(c, n + idx)] = -a[c];
            }
            rhs[n + idx] = *b;
        }
        // H x − Aᵀ μ = −f, A x = b; μ ≥ 0 for active inequalities.
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let mu = sol.rows(n, k).into_owned();
        if (0..active.len()).any(|a| mu[m_eq + a] < -tol) {
            continue;
        }
        let slack = &qp.a_in * &x - &qp.b_in;
        if slack.iter().any(|s| *s < -tol) {
            continue;
        }
        let eq_res = &qp.a_eq * &x - &qp.b_eq;
        if eq_res.iter().any(|r| r.abs() > tol) {
            continue;
        }
        let objective = qp.objective(&x);
        if best.as_ref().map_or(true, |b| objective < b.objective - 1e-12) {
            best = Some(OracleSolution { x, objective });
        }
    }
    best
}
