//! Random strictly convex QPs that are feasible by construction, in both the
//! dense oracle form and the solver's sparse form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swarm_dmpc::qp::{CsrMatrix, QpProblem};

use super::oracle::DenseQp;

pub struct Case {
    pub dense: DenseQp,
    pub problem: QpProblem<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Strictly convex QP with `m_eq` equalities, `m_in` general inequalities and
/// `n_bounds` finite bounds, feasible by construction.
pub fn random_case(rng: &mut ChaCha8Rng, n: usize, m_eq: usize, m_in: usize, n_bounds: usize) -> Case {
    let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let m = g(n, n);
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let f = g(n, 1).column(0).into_owned() * 3.0;
    let a_eq = g(m_eq, n);
    let a_in = g(m_in, n);
    let x_feas = g(n, 1).column(0).into_owned();
    let b_eq = &a_eq * &x_feas;
    let margins = g(m_in, 1).column(0).map(|v: f64| v.abs() * 0.5);
    let b_in = &a_in * &x_feas - margins;

    let mut lb = vec![f64::NEG_INFINITY; n];
    let mut ub = vec![f64::INFINITY; n];
    let mut bound_rows = Vec::new();
    for k in 0..n_bounds {
        let i = k % n;
        let width = 0.1 + rng.gen_range(0.0..0.5);
        if k < n && rng.gen_bool(0.5) {
            lb[i] = x_feas[i] - width;
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            bound_rows.push((row, lb[i]));
        } else {
            ub[i] = x_feas[i] + width;
            let mut row = vec![0.0; n];
            row[i] = -1.0;
            bound_rows.push((row, -ub[i]));
        }
    }

    let mut oracle_in = to_rows(&a_in);
    let mut oracle_b: Vec<f64> = b_in.iter().copied().collect();
    for (row, b) in &bound_rows {
        oracle_in.push(row.clone());
        oracle_b.push(*b);
    }
    let dense = DenseQp {
        h: h.clone(),
        f: f.clone(),
        a_eq: a_eq.clone(),
        b_eq: b_eq.clone(),
        a_in: DMatrix::from_row_iterator(oracle_in.len(), n, oracle_in.iter().flatten().copied()),
        b_in: DVector::from_vec(oracle_b),
    };
    let mut problem = QpProblem::new(CsrMatrix::from_dense(&to_rows(&h), n), f.iter().copied().collect())
        .unwrap()
        .with_equalities(CsrMatrix::from_dense(&to_rows(&a_eq), n), b_eq.iter().copied().collect())
        .unwrap()
        .with_inequalities(CsrMatrix::from_dense(&to_rows(&a_in), n), b_in.iter().copied().collect())
        .unwrap();
    if n_bounds > 0 {
        problem = problem.with_bounds(lb, ub).unwrap();
    }
    Case { dense, problem }
}
