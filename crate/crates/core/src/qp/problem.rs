use serde::{Deserialize, Serialize};

use super::sparse::CsrMatrix;
use crate::error::{DmpcError, Result};
use crate::scalar::Real;

/// Eigenvalues of `H` below `−PSD_TOLERANCE` are rejected.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Convex QP
///
/// ```text
/// minimize    ½ xᵀ H x + fᵀ x
/// subject to  A_eq x  = b_eq
///             A_in x ≥ b_in
///             lb ≤ x ≤ ub
/// ```
///
/// `H` is symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T> {
    pub(crate) h: CsrMatrix<T>,
    pub(crate) f: Vec<T>,
    pub(crate) a_eq: CsrMatrix<T>,
    pub(crate) b_eq: Vec<T>,
    pub(crate) a_in: CsrMatrix<T>,
    pub(crate) b_in: Vec<T>,
    pub(crate) lb: Option<Vec<T>>,
    pub(crate) ub: Option<Vec<T>>,
}

impl<T: Real> QpProblem<T> {
    pub fn new(h: CsrMatrix<T>, f: Vec<T>) -> Result<Self> {
        let n = f.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(DmpcError::Dimension(format!(
                "H is {}x{} but f has length {n}",
                h.nrows(),
                h.ncols()
            )));
        }
        let h = if h.asymmetry() > T::zero() { h.symmetrized() } else { h };
        Ok(Self {
            h,
            f,
            a_eq: CsrMatrix::zeros(0, n),
            b_eq: Vec::new(),
            a_in: CsrMatrix::zeros(0, n),
            b_in: Vec::new(),
            lb: None,
            ub: None,
        })
    }

    pub fn with_equalities(mut self, a: CsrMatrix<T>, b: Vec<T>) -> Result<Self> {
        self.check_rows(&a, &b, "equality")?;
        self.a_eq = a;
        self.b_eq = b;
        Ok(self)
    }

    pub fn with_inequalities(mut self, a: CsrMatrix<T>, b: Vec<T>) -> Result<Self> {
        self.check_rows(&a, &b, "inequality")?;
        self.a_in = a;
        self.b_in = b;
        Ok(self)
    }

    /// Variable bounds; use infinities for free sides.
    pub fn with_bounds(mut self, lb: Vec<T>, ub: Vec<T>) -> Result<Self> {
        let n = self.dim();
        if lb.len() != n || ub.len() != n {
            return Err(DmpcError::Dimension("bound vectors must match dimension".into()));
        }
        if lb.iter().zip(&ub).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(DmpcError::InvalidArgument("lower bound above upper bound".into()));
        }
        self.lb = Some(lb);
        self.ub = Some(ub);
        Ok(self)
    }

    fn check_rows(&self, a: &CsrMatrix<T>, b: &[T], what: &str) -> Result<()> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(DmpcError::Dimension(format!(
                "{what} matrix is {}x{}, rhs {}, dimension {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.dim()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(DmpcError::InvalidArgument(format!("non-finite {what} rhs")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_in(&self) -> usize {
        self.b_in.len()
    }

    pub fn h(&self) -> &CsrMatrix<T> {
        &self.h
    }

    pub fn f(&self) -> &[T] {
        &self.f
    }

    pub fn a_eq(&self) -> &CsrMatrix<T> {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &[T] {
        &self.b_eq
    }

    pub fn a_in(&self) -> &CsrMatrix<T> {
        &self.a_in
    }

    pub fn b_in(&self) -> &[T] {
        &self.b_in
    }

    pub fn lb(&self) -> Option<&[T]> {
        self.lb.as_deref()
    }

    pub fn ub(&self) -> Option<&[T]> {
        self.ub.as_deref()
    }

    pub fn set_linear_cost(&mut self, f: Vec<T>) -> Result<()> {
        if f.len() != self.dim() {
            return Err(DmpcError::Dimension("linear cost length".into()));
        }
        self.f = f;
        Ok(())
    }

    /// `½ xᵀ H x + fᵀ x`
    pub fn objective(&self, x: &[T]) -> T {
        let mut hx = vec![T::zero(); self.dim()];
        self.h.mul_vec(x, &mut hx);
        let half = T::lit(0.5);
        x.iter()
            .zip(&hx)
            .zip(&self.f)
            .map(|((xi, hxi), fi)| half * *xi * *hxi + *fi * *xi)
            .sum()
    }

    /// Lower-triangular entries of `H`.
    pub(crate) fn h_lower(&self) -> Vec<(usize, usize, T)> {
        self.h.triplets().into_iter().filter(|(i, j, _)| i >= j).collect()
    }

    /// Rejects `H` with an eigenvalue below `−1e−8`.
    pub fn check_psd(&self) -> Result<()> {
        super::ldl::check_psd(self.dim(), &self.h_lower(), T::lit(PSD_TOLERANCE))
    }

    /// Self-describing dump with dense row-major matrices.
    pub fn to_dump(&self) -> QpDump<T> {
        QpDump {
            format: "swarm-dmpc/qp".into(),
            version: 1,
            objective: "0.5 x'Hx + f'x".into(),
            constraints: "Aeq x = beq; Ain x >= bin; lb <= x <= ub".into(),
            n: self.dim(),
            m_eq: self.num_eq(),
            m_in: self.num_in(),
            h: self.h.to_dense(),
            f: self.f.clone(),
            a_eq: self.a_eq.to_dense(),
            b_eq: self.b_eq.clone(),
            a_in: self.a_in.to_dense(),
            b_in: self.b_in.clone(),
            lb: self.lb.as_ref().map(|v| v.iter().map(|x| finite_or_none(*x)).collect()),
            ub: self.ub.as_ref().map(|v| v.iter().map(|x| finite_or_none(*x)).collect()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_dump())?)
    }

    pub fn from_dump(d: &QpDump<T>) -> Result<Self> {
        let n = d.n;
        let mut p = Self::new(CsrMatrix::from_dense(&d.h, n), d.f.clone())?
            .with_equalities(CsrMatrix::from_dense(&d.a_eq, n), d.b_eq.clone())?
            .with_inequalities(CsrMatrix::from_dense(&d.a_in, n), d.b_in.clone())?;
        if d.lb.is_some() || d.ub.is_some() {
            let unwrap = |v: &Option<Vec<Option<T>>>, inf: T| -> Vec<T> {
                v.as_ref()
                    .map(|v| v.iter().map(|x| x.unwrap_or(inf)).collect())
                    .unwrap_or_else(|| vec![inf; n])
            };
            p = p.with_bounds(unwrap(&d.lb, T::neg_infinity()), unwrap(&d.ub, T::infinity()))?;
        }
        Ok(p)
    }
}

fn finite_or_none<T: Real>(x: T) -> Option<T> {
    x.is_finite().then_some(x)
}

/// JSON form of a [`QpProblem`]. Infinite bounds are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct QpDump<T> {
    pub format: String,
    pub version: u32,
    pub objective: String,
    pub constraints: String,
    pub n: usize,
    pub m_eq: usize,
    pub m_in: usize,
    #[serde(rename = "H")]
    pub h: Vec<Vec<T>>,
    pub f: Vec<T>,
    #[serde(rename = "Aeq")]
    pub a_eq: Vec<Vec<T>>,
    pub b_eq: Vec<T>,
    #[serde(rename = "Ain")]
    pub a_in: Vec<Vec<T>>,
    pub b_in: Vec<T>,
    pub lb: Option<Vec<Option<T>>>,
    pub ub: Option<Vec<Option<T>>>,
}
