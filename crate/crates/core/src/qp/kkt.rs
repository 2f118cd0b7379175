use serde::{Deserialize, Serialize};

use super::ldl::EnvelopeLdl;
use super::problem::QpProblem;
use crate::error::{DmpcError, Result};
use crate::scalar::Real;

/// Optimality residuals of a candidate point, all in the infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KktReport<T> {
    /// Largest equality, inequality or bound violation.
    pub primal: T,
    /// Stationarity `‖H x + f + Aᵀ y‖∞`.
    pub dual: T,
    /// Largest `|y_i · slack_i|`.
    pub complementarity: T,
}

impl<T: Real> KktReport<T> {
    pub fn max(&self) -> T {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Copy)]
enum Row {
    Eq(usize),
    In(usize),
    Lower(usize),
    Upper(usize),
}

/// Residuals of `x` with stacked multipliers `y = [y_eq, y_in, y_bound]`
/// (sign convention of [`QpSolution`](super::QpSolution)). Without `y` the
/// multipliers are estimated by least squares on the constraints active within
/// `active_tol`, discarding wrong-sign estimates until none remain.
pub fn kkt_check<T: Real>(
    p: &QpProblem<T>,
    x: &[T],
    y: Option<&[T]>,
    active_tol: T,
) -> Result<KktReport<T>> {
    let n = p.dim();
    if x.len() != n {
        return Err(DmpcError::Dimension("candidate length".into()));
    }
    let (m_eq, m_in) = (p.num_eq(), p.num_in());
    let mut ax_eq = vec![T::zero(); m_eq];
    p.a_eq().mul_vec(x, &mut ax_eq);
    let mut ax_in = vec![T::zero(); m_in];
    p.a_in().mul_vec(x, &mut ax_in);
    let slack_in: Vec<T> = ax_in.iter().zip(p.b_in()).map(|(a, b)| *a - *b).collect();

    let mut primal = T::zero();
    for (a, b) in ax_eq.iter().zip(p.b_eq()) {
        primal = primal.max((*a - *b).abs());
    }
    for s in &slack_in {
        primal = primal.max(-*s);
    }
    if let (Some(lb), Some(ub)) = (p.lb(), p.ub()) {
        for i in 0..n {
            primal = primal.max(lb[i] - x[i]).max(x[i] - ub[i]);
        }
    }

    let mut grad = vec![T::zero(); n];
    p.h().mul_vec(x, &mut grad);
    for (g, f) in grad.iter_mut().zip(p.f()) {
        *g += *f;
    }

    let stacked = match y {
        Some(y) => {
            if y.len() != m_eq + m_in + n {
                return Err(DmpcError::Dimension("multiplier length".into()));
            }
            y.to_vec()
        }
        None => estimate_multipliers(p, x, &grad, &slack_in, active_tol),
    };

    let mut stat = grad.clone();
    let mut tmp = vec![T::zero(); n];
    p.a_eq().tmul_vec(&stacked[..m_eq], &mut tmp);
    stat.iter_mut().zip(&tmp).for_each(|(s, t)| *s += *t);
    p.a_in().tmul_vec(&stacked[m_eq..m_eq + m_in], &mut tmp);
    stat.iter_mut().zip(&tmp).for_each(|(s, t)| *s += *t);
    for i in 0..n {
        stat[i] += stacked[m_eq + m_in + i];
    }
    let dual = stat.iter().fold(T::zero(), |a, v| a.max(v.abs()));

    let mut comp = T::zero();
    for k in 0..m_in {
        comp = comp.max((stacked[m_eq + k] * slack_in[k]).abs());
    }
    if let (Some(lb), Some(ub)) = (p.lb(), p.ub()) {
        for i in 0..n {
            let yb = stacked[m_eq + m_in + i];
            let slack = if yb < T::zero() { x[i] - lb[i] } else { ub[i] - x[i] };
            if yb != T::zero() {
                comp = comp.max((yb * slack).abs());
            }
        }
    }
    Ok(KktReport { primal, dual, complementarity: comp })
}

fn estimate_multipliers<T: Real>(
    p: &QpProblem<T>,
    x: &[T],
    grad: &[T],
    slack_in: &[T],
    tol: T,
) -> Vec<T> {
    let n = p.dim();
    let (m_eq, m_in) = (p.num_eq(), p.num_in());
    let mut rows: Vec<Row> = (0..m_eq).map(Row::Eq).collect();
    rows.extend((0..m_in).filter(|&k| slack_in[k].abs() <= tol).map(Row::In));
    if let (Some(lb), Some(ub)) = (p.lb(), p.ub()) {
        for i in 0..n {
            if lb[i].is_finite() && (x[i] - lb[i]).abs() <= tol {
                rows.push(Row::Lower(i));
            } else if ub[i].is_finite() && (ub[i] - x[i]).abs() <= tol {
                rows.push(Row::Upper(i));
            }
        }
    }
    let dense_row = |r: Row| -> Vec<T> {
        let mut v = vec![T::zero(); n];
        match r {
            Row::Eq(k) => p.a_eq().row(k).for_each(|(c, a)| v[c] = a),
            Row::In(k) => p.a_in().row(k).for_each(|(c, a)| v[c] = a),
            Row::Lower(i) | Row::Upper(i) => v[i] = T::one(),
        }
        v
    };
    loop {
        let g: Vec<Vec<T>> = rows.iter().map(|&r| dense_row(r)).collect();
        let k = g.len();
        let mut out = vec![T::zero(); m_eq + m_in + n];
        if k == 0 {
            return out;
        }
        // (G Gᵀ + εI) y = −G ∇
        let mut lower = Vec::new();
        for a in 0..k {
            for b in 0..=a {
                let mut v: T = g[a].iter().zip(&g[b]).map(|(p, q)| *p * *q).sum();
                if a == b {
                    v += T::lit(1e-12);
                }
                if v != T::zero() {
                    lower.push((a, b, v));
                }
            }
        }
        let rhs: Vec<T> = g
            .iter()
            .map(|row| -row.iter().zip(grad).map(|(p, q)| *p * *q).sum::<T>())
            .collect();
        let yk = match EnvelopeLdl::new(k, &lower) {
            Ok(f) => f.solve(&rhs),
            Err(_) => return out,
        };
        let mut drop = None;
        let mut worst = T::zero();
        for (idx, (&r, &v)) in rows.iter().zip(&yk).enumerate() {
            let wrong = match r {
                Row::Eq(_) => T::zero(),
                Row::In(_) | Row::Lower(_) => v,
                Row::Upper(_) => -v,
            };
            if wrong > worst {
                worst = wrong;
                drop = Some(idx);
            }
        }
        match drop {
            Some(idx) if worst > tol => {
                rows.remove(idx);
            }
            _ => {
                for (&r, &v) in rows.iter().zip(&yk) {
                    match r {
                        Row::Eq(k) => out[k] = v,
                        Row::In(k) => out[m_eq + k] = v,
                        Row::Lower(i) | Row::Upper(i) => out[m_eq + m_in + i] = v,
                    }
                }
                return out;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{solve, CsrMatrix, QpSettings};

    #[test]
    fn optimum_passes_and_perturbation_fails() {
        let p = QpProblem::new(CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 2.0]], 2), vec![-2.0, -4.0])
            .unwrap()
            .with_inequalities(CsrMatrix::from_dense(&[vec![-1.0, -1.0]], 2), vec![-2.0])
            .unwrap();
        let sol = solve(&p, &QpSettings::default()).unwrap();
        let with = kkt_check(&p, &sol.x, Some(&sol.stacked_duals()), 1e-6).unwrap();
        assert!(with.max() < 1e-6, "{with:?}");
        let without = kkt_check(&p, &sol.x, None, 1e-6).unwrap();
        assert!(without.max() < 1e-6, "{without:?}");
        let off = kkt_check(&p, &[0.4, 1.4], None, 1e-6).unwrap();
        assert!(off.dual > 1e-2);
    }
}
