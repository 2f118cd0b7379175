//! Distance-based discrete-time barrier functions and their linearization
//! into affine rows over flattened trajectory variables.
//!
//! For a barrier `h` and slope `α`, the decrease condition
//! `h(x_{k+1}) − h(x_k) ≥ −α h(x_k)` is enforced as
//! `ĥ_{k+1} − (1 − α) ĥ_k ≥ 0`, where `ĥ` is the first-order expansion of `h`
//! at the operating trajectory. Both sides are expanded, except at `k = 0`
//! where the current state is known and `h(x_0)` enters the right-hand side.

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, AgentTrajectory, NX};
use crate::error::{DmpcError, Result};
use crate::scalar::Real;

/// Separations below this are treated as coincident positions.
pub const DEGENERATE_SEPARATION: f64 = 1e-6;
/// Row coefficients smaller than this are dropped.
pub const COEFF_DROP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle<T> {
    pub center: [T; 2],
}

impl<T: Real> Obstacle<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { center: [x, y] }
    }
}

impl<T: Real> Serialize for Obstacle<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.center.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Obstacle<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let center = <[T; 2]>::deserialize(d)?;
        if !center[0].is_finite() || !center[1].is_finite() {
            return Err(serde::de::Error::custom("obstacle center must be finite"));
        }
        Ok(Self { center })
    }
}

/// Safety distance and linear class-K slope `α(s) = alpha_slope · s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams<T> {
    pub d_th: T,
    pub alpha_slope: T,
}

impl<T: Real> SafetyParams<T> {
    pub fn new(d_th: T, alpha_slope: T) -> Result<Self> {
        let p = Self { d_th, alpha_slope };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_th > T::zero()) || !self.d_th.is_finite() {
            return Err(DmpcError::InvalidArgument(format!(
                "d_th must be positive, got {}",
                self.d_th
            )));
        }
        if !(self.alpha_slope > T::zero() && self.alpha_slope < T::one()) {
            return Err(DmpcError::InvalidArgument(format!(
                "alpha slope must lie in (0, 1), got {}",
                self.alpha_slope
            )));
        }
        Ok(())
    }

    /// `1 − α`, the per-step contraction allowed by the decrease condition.
    pub fn retention(&self) -> T {
        T::one() - self.alpha_slope
    }
}

impl Default for SafetyParams<f64> {
    fn default() -> Self {
        Self {
            d_th: 0.5,
            alpha_slope: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `coeffs · x ≥ rhs`
    Ge,
    /// `coeffs · x = rhs`
    Eq,
}

/// Sparse affine constraint row over a flattened decision vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRow<T> {
    pub coeffs: Vec<(usize, T)>,
    pub rhs: T,
    pub sense: Sense,
    /// Set when a gradient had to be substituted at coincident positions.
    pub degenerate: bool,
}

impl<T: Real> AffineRow<T> {
    /// `coeffs · x`.
    pub fn lhs(&self, x: &[T]) -> T {
        self.coeffs.iter().map(|(i, c)| *c * x[*i]).sum()
    }

    /// `coeffs · x − rhs`; non-negative when a `Ge` row holds.
    pub fn margin(&self, x: &[T]) -> T {
        self.lhs(x) - self.rhs
    }

    /// Row that constrains nothing (`0 ≥ 0`).
    pub fn vacuous() -> Self {
        Self {
            coeffs: Vec::new(),
            rhs: T::zero(),
            sense: Sense::Ge,
            degenerate: false,
        }
    }

    /// Copy with every column index shifted by `by`.
    pub fn shifted(&self, by: usize) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|(i, c)| (i + by, *c)).collect(),
            ..self.clone()
        }
    }
}

/// Position of one agent's `ξ` inside a larger flattened decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub horizon: usize,
    pub offset: usize,
    /// Dimension of the whole decision vector the rows index into.
    pub dim: usize,
}

impl DecisionLayout {
    /// A standalone `ξ` of horizon `n`.
    pub fn single(horizon: usize) -> Self {
        Self {
            horizon,
            offset: 0,
            dim: horizon * crate::dynamics::NXU,
        }
    }

    /// Index of component `c` of predicted state `x_{t+k|t}`, `k ∈ 1..=N`.
    pub fn state(&self, k: usize, c: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon && c < NX);
        self.offset + NX * (k - 1) + c
    }

    /// Index of component `c` of input `u_{t+k|t}`, `k ∈ 0..N`.
    pub fn input(&self, k: usize, c: usize) -> usize {
        debug_assert!(k < self.horizon && c < crate::dynamics::NU);
        self.offset + NX * self.horizon + crate::dynamics::NU * k + c
    }
}

/// `‖g(x) − o‖ − d_th`.
pub fn h_obstacle<T: Real>(x: &AgentState<T>, o: &Obstacle<T>, p: &SafetyParams<T>) -> T {
    (x.px - o.center[0]).hypot(x.py - o.center[1]) - p.d_th
}

/// `‖g(xⁱ) − g(xʲ)‖ − d_th`.
pub fn h_interagent<T: Real>(xi: &AgentState<T>, xj: &AgentState<T>, p: &SafetyParams<T>) -> T {
    (xi.px - xj.px).hypot(xi.py - xj.py) - p.d_th
}

/// Unit vector along `(dx, dy)`, or `(1, 0)` flagged degenerate when the
/// vector is shorter than [`DEGENERATE_SEPARATION`].
pub fn unit_direction<T: Real>(dx: T, dy: T) -> ([T; 2], bool) {
    let n = dx.hypot(dy);
    if n < T::lit(DEGENERATE_SEPARATION) {
        ([T::one(), T::zero()], true)
    } else {
        ([dx / n, dy / n], false)
    }
}

/// Expansion data of a distance barrier at one operating position.
#[derive(Clone, Copy)]
struct Expansion<T> {
    value: T,
    grad: [T; 2],
    /// `grad · p̄` in absolute coordinates.
    grad_dot_point: T,
    degenerate: bool,
}

fn expand_point<T: Real>(p: [T; 2], anchor: [T; 2], d_th: T) -> Expansion<T> {
    let dx = p[0] - anchor[0];
    let dy = p[1] - anchor[1];
    let (grad, degenerate) = unit_direction(dx, dy);
    Expansion {
        value: dx.hypot(dy) - d_th,
        grad,
        grad_dot_point: grad[0] * p[0] + grad[1] * p[1],
        degenerate,
    }
}

fn push_coeff<T: Real>(coeffs: &mut Vec<(usize, T)>, idx: usize, v: T) {
    if v.abs() >= T::lit(COEFF_DROP) {
        coeffs.push((idx, v));
    }
}

fn check_layout<T: Real>(op: &AgentTrajectory<T>, layout: &DecisionLayout) -> Result<()> {
    if op.horizon() != layout.horizon {
        return Err(DmpcError::Dimension(format!(
            "operating trajectory horizon {} differs from layout horizon {}",
            op.horizon(),
            layout.horizon
        )));
    }
    if layout.offset + layout.horizon * crate::dynamics::NXU > layout.dim {
        return Err(DmpcError::Dimension("layout exceeds decision vector".into()));
    }
    Ok(())
}

/// Linearized obstacle decrease rows, one per obstacle and horizon step,
/// ordered obstacle-major. `x0` is the measured state `x_{t|t}`.
pub fn cbf_rows_obstacle<T: Real>(
    x0: &AgentState<T>,
    op: &AgentTrajectory<T>,
    obstacles: &[Obstacle<T>],
    p: &SafetyParams<T>,
    layout: &DecisionLayout,
) -> Result<Vec<AffineRow<T>>> {
    check_layout(op, layout)?;
    let n = layout.horizon;
    let q = p.retention();
    let mut rows = Vec::with_capacity(n * obstacles.len());
    for o in obstacles {
        // ĥ(p) = h(p̄) + a·(p − p̄), a = (p̄ − o)/‖p̄ − o‖.
        let exps: Vec<Expansion<T>> = std::iter::once(x0)
            .chain(op.states.iter())
            .map(|s| expand_point(s.position(), o.center, p.d_th))
            .collect();
        for k in 0..n {
            let next = &exps[k + 1];
            let cur = &exps[k];
            let mut coeffs = Vec::with_capacity(4);
            for c in 0..2 {
                push_coeff(&mut coeffs, layout.state(k + 1, c), next.grad[c]);
            }
            let mut rhs = next.grad_dot_point - next.value;
            if k == 0 {
                rhs += q * cur.value;
            } else {
                for c in 0..2 {
                    push_coeff(&mut coeffs, layout.state(k, c), -q * cur.grad[c]);
                }
                rhs += q * (cur.value - cur.grad_dot_point);
            }
            rows.push(AffineRow {
                coeffs,
                rhs,
                sense: Sense::Ge,
                degenerate: next.degenerate || cur.degenerate,
            });
        }
    }
    Ok(rows)
}

/// Linearized inter-agent decrease rows for steps `0..steps` (`steps ≤ N`) over
/// the joint layout of agents `i` and `j`.
///
/// Negating a row gives the affine coupling function `ψ_k(ξⁱ, ξʲ) ≤ 0`.
pub fn cbf_rows_interagent<T: Real>(
    x0_i: &AgentState<T>,
    op_i: &AgentTrajectory<T>,
    layout_i: &DecisionLayout,
    x0_j: &AgentState<T>,
    op_j: &AgentTrajectory<T>,
    layout_j: &DecisionLayout,
    p: &SafetyParams<T>,
    steps: usize,
) -> Result<Vec<AffineRow<T>>> {
    check_layout(op_i, layout_i)?;
    check_layout(op_j, layout_j)?;
    if layout_i.horizon != layout_j.horizon || layout_i.dim != layout_j.dim {
        return Err(DmpcError::Dimension(
            "inter-agent layouts must share horizon and decision dimension".into(),
        ));
    }
    let n = layout_i.horizon;
    if steps > n {
        return Err(DmpcError::InvalidArgument(format!(
            "requested {steps} barrier steps over horizon {n}"
        )));
    }
    let q = p.retention();
    // ĥ(pⁱ, pʲ) = h̄ + a·(pⁱ − p̄ⁱ) − a·(pʲ − p̄ʲ), a = Δp̄/‖Δp̄‖.
    let exps: Vec<(Expansion<T>, T)> = std::iter::once((x0_i, x0_j))
        .chain(op_i.states.iter().zip(op_j.states.iter()))
        .map(|(si, sj)| {
            let e = expand_point(si.position(), sj.position(), p.d_th);
            let lin = e.grad[0] * (si.px - sj.px) + e.grad[1] * (si.py - sj.py);
            (e, lin)
        })
        .collect();
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let (next, next_lin) = exps[k + 1];
        let (cur, cur_lin) = exps[k];
        let mut coeffs = Vec::with_capacity(8);
        for c in 0..2 {
            push_coeff(&mut coeffs, layout_i.state(k + 1, c), next.grad[c]);
            push_coeff(&mut coeffs, layout_j.state(k + 1, c), -next.grad[c]);
        }
        let mut rhs = next_lin - next.value;
        if k == 0 {
            rhs += q * cur.value;
        } else {
            for c in 0..2 {
                push_coeff(&mut coeffs, layout_i.state(k, c), -q * cur.grad[c]);
                push_coeff(&mut coeffs, layout_j.state(k, c), q * cur.grad[c]);
            }
            rhs += q * (cur.value - cur_lin);
        }
        coeffs.sort_by_key(|(i, _)| *i);
        rows.push(AffineRow {
            coeffs,
            rhs,
            sense: Sense::Ge,
            degenerate: next.degenerate || cur.degenerate,
        });
    }
    Ok(rows)
}
