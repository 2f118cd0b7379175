//! Kinematic unicycle: Euler-discretized step, analytic linearization,
//! rollouts and Bézier reference generation.

use serde::de::{Deserializer, Error as _};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{DmpcError, Result};
use crate::scalar::Real;

pub const NX: usize = 3;
pub const NU: usize = 2;
/// Decision variables per horizon step (`NX + NU`).
pub const NXU: usize = NX + NU;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    let mut a = theta % two_pi;
    if a > pi {
        a -= two_pi;
    } else if a <= -pi {
        a += two_pi;
    }
    a
}

/// Planar pose of one agent. `theta` is kept wrapped to `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState<T> {
    pub px: T,
    pub py: T,
    pub theta: T,
}

impl<T: Real> AgentState<T> {
    pub fn new(px: T, py: T, theta: T) -> Self {
        Self {
            px,
            py,
            theta: wrap_angle(theta),
        }
    }

    pub fn from_array(v: [T; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.px, self.py, self.theta]
    }

    pub fn position(&self) -> [T; 2] {
        [self.px, self.py]
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.theta.is_finite()
    }

    /// Additive offset in all three coordinates, re-wrapping the heading.
    pub fn offset(&self, delta: &AgentState<T>) -> Self {
        Self::new(
            self.px + delta.px,
            self.py + delta.py,
            self.theta + delta.theta,
        )
    }

    pub fn distance_to(&self, other: &AgentState<T>) -> T {
        (self.px - other.px).hypot(self.py - other.py)
    }
}

impl<T: Real> Serialize for AgentState<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.px, self.py, self.theta].serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for AgentState<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = <[T; 3]>::deserialize(d)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(D::Error::custom("state entries must be finite"));
        }
        Ok(Self::from_array(raw))
    }
}

/// Linear and angular velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput<T> {
    pub v: T,
    pub omega: T,
}

impl<T: Real> ControlInput<T> {
    pub fn new(v: T, omega: T) -> Self {
        Self { v, omega }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }
}

impl<T: Real> Serialize for ControlInput<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.v, self.omega].serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for ControlInput<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [v, omega] = <[T; 2]>::deserialize(d)?;
        Ok(Self::new(v, omega))
    }
}

/// Predicted states `x_{t+1|t} … x_{t+N|t}` and inputs `u_{t|t} … u_{t+N−1|t}`.
///
/// Flattened layout (see [`AgentTrajectory::flatten`]): all `N` states first,
/// time-major `(px, py, θ)`, followed by all `N` inputs, time-major `(v, ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AgentTrajectory<T: Real> {
    pub states: Vec<AgentState<T>>,
    pub inputs: Vec<ControlInput<T>>,
    pub stamp: usize,
}

impl<T: Real> AgentTrajectory<T> {
    pub fn new(
        states: Vec<AgentState<T>>,
        inputs: Vec<ControlInput<T>>,
        stamp: usize,
    ) -> Result<Self> {
        if states.len() != inputs.len() || states.is_empty() {
            return Err(DmpcError::Dimension(format!(
                "trajectory has {} states and {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        Ok(Self {
            states,
            inputs,
            stamp,
        })
    }

    /// Zero-input hold at `x0` over `n` steps.
    pub fn hold(x0: AgentState<T>, n: usize, stamp: usize) -> Self {
        Self {
            states: vec![x0; n],
            inputs: vec![ControlInput::zero(); n],
            stamp,
        }
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.horizon() * NXU
    }

    pub fn flatten(&self) -> Vec<T> {
        let n = self.horizon();
        let mut out = Vec::with_capacity(n * NXU);
        for s in &self.states {
            out.extend_from_slice(&[s.px, s.py, s.theta]);
        }
        for u in &self.inputs {
            out.extend_from_slice(&[u.v, u.omega]);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten). Headings are re-wrapped.
    pub fn unflatten(xi: &[T], stamp: usize) -> Result<Self> {
        if xi.is_empty() || xi.len() % NXU != 0 {
            return Err(DmpcError::Dimension(format!(
                "flattened trajectory length {} is not a positive multiple of {NXU}",
                xi.len()
            )));
        }
        let n = xi.len() / NXU;
        let states = (0..n)
            .map(|k| AgentState::new(xi[NX * k], xi[NX * k + 1], xi[NX * k + 2]))
            .collect();
        let inputs = (0..n)
            .map(|k| ControlInput::new(xi[NX * n + NU * k], xi[NX * n + NU * k + 1]))
            .collect();
        Ok(Self {
            states,
            inputs,
            stamp,
        })
    }

    /// One-step receding-horizon shift of the inputs, repeating the last one.
    pub fn shifted_inputs(&self) -> Vec<ControlInput<T>> {
        let mut inputs: Vec<_> = self.inputs.iter().skip(1).copied().collect();
        inputs.push(*self.inputs.last().expect("non-empty trajectory"));
        inputs
    }
}

/// Euler step of the kinematic unicycle.
pub fn step<T: Real>(x: &AgentState<T>, u: &ControlInput<T>, ts: T) -> Result<AgentState<T>> {
    check_step_args(x, u, ts)?;
    Ok(step_unchecked(x, u, ts))
}

fn check_step_args<T: Real>(x: &AgentState<T>, u: &ControlInput<T>, ts: T) -> Result<()> {
    if !x.is_finite() || !u.is_finite() || !ts.is_finite() {
        return Err(DmpcError::InvalidArgument(
            "non-finite state, input or sampling time".into(),
        ));
    }
    if ts <= T::zero() {
        return Err(DmpcError::InvalidArgument(format!(
            "sampling time must be positive, got {ts}"
        )));
    }
    Ok(())
}

pub(crate) fn step_unchecked<T: Real>(x: &AgentState<T>, u: &ControlInput<T>, ts: T) -> AgentState<T> {
    let [px, py, th] = step_continuous_heading([x.px, x.py, x.theta], u, ts);
    AgentState::new(px, py, th)
}

/// Euler step without wrapping the heading; the QP works in this frame.
pub(crate) fn step_continuous_heading<T: Real>(x: [T; 3], u: &ControlInput<T>, ts: T) -> [T; 3] {
    let (s, c) = x[2].sin_cos();
    [
        x[0] + ts * u.v * c,
        x[1] + ts * u.v * s,
        x[2] + ts * u.omega,
    ]
}

/// Affine model `x⁺ ≈ A x + B u + c` of one Euler step around an operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepJacobian<T> {
    pub a: [[T; NX]; NX],
    pub b: [[T; NU]; NX],
    pub c: [T; NX],
}

impl<T: Real> StepJacobian<T> {
    pub fn apply(&self, x: [T; 3], u: &ControlInput<T>) -> [T; 3] {
        let mut out = self.c;
        for (r, o) in out.iter_mut().enumerate() {
            for (col, xv) in x.iter().enumerate() {
                *o += self.a[r][col] * *xv;
            }
            *o += self.b[r][0] * u.v + self.b[r][1] * u.omega;
        }
        out
    }
}

/// Per-step linearizations along a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics<T> {
    pub steps: Vec<StepJacobian<T>>,
}

/// Jacobians of [`step`] at `(x̄, ū)`. The affine residual `c` is computed in the
/// continuous-heading frame, so `A x̄ + B ū + c` equals the Euler step before
/// the heading is wrapped.
pub fn linearize<T: Real>(
    x_bar: &AgentState<T>,
    u_bar: &ControlInput<T>,
    ts: T,
) -> Result<StepJacobian<T>> {
    check_step_args(x_bar, u_bar, ts)?;
    Ok(linearize_raw([x_bar.px, x_bar.py, x_bar.theta], u_bar, ts))
}

pub(crate) fn linearize_raw<T: Real>(x: [T; 3], u: &ControlInput<T>, ts: T) -> StepJacobian<T> {
    let (s, c) = x[2].sin_cos();
    let (o, l) = (T::zero(), T::one());
    let a = [
        [l, o, -ts * u.v * s],
        [o, l, ts * u.v * c],
        [o, o, l],
    ];
    let b = [[ts * c, o], [ts * s, o], [o, ts]];
    let next = step_continuous_heading(x, u, ts);
    let mut resid = next;
    for r in 0..NX {
        for col in 0..NX {
            resid[r] -= a[r][col] * x[col];
        }
        resid[r] -= b[r][0] * u.v + b[r][1] * u.omega;
    }
    StepJacobian { a, b, c: resid }
}

/// Iterates [`step`] from `x0`, returning the `inputs.len()` successor states.
pub fn rollout<T: Real>(
    x0: &AgentState<T>,
    inputs: &[ControlInput<T>],
    ts: T,
) -> Result<Vec<AgentState<T>>> {
    if inputs.is_empty() {
        return Err(DmpcError::InvalidArgument("rollout needs at least one input".into()));
    }
    let mut out = Vec::with_capacity(inputs.len());
    let mut x = *x0;
    for u in inputs {
        x = step(&x, u, ts)?;
        out.push(x);
    }
    Ok(out)
}

/// Desired states `x^des_{t|t} … x^des_{t+N|t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReferenceTrajectory<T: Real> {
    pub samples: Vec<AgentState<T>>,
}

impl<T: Real> ReferenceTrajectory<T> {
    pub fn horizon(&self) -> usize {
        self.samples.len().saturating_sub(1)
    }
}

/// Cubic Bézier from the position of `x0` to the position of `goal`, with the
/// interior control points a third of the start-goal distance along the start
/// and goal headings. Sampled at `n + 1` uniform parameter values; the heading
/// of each sample is the curve tangent (goal heading where it vanishes).
pub fn bezier_reference<T: Real>(
    x0: &AgentState<T>,
    goal: &AgentState<T>,
    n: usize,
) -> Result<ReferenceTrajectory<T>> {
    bezier_reference_paced(x0, goal, n, None)
}

/// Like [`bezier_reference`], but the uniform parameter step is raised so
/// that consecutive samples are about `step_len` apart along the chord. The
/// curve then ends before the horizon does and the remaining samples sit on
/// the goal.
pub fn bezier_reference_paced<T: Real>(
    x0: &AgentState<T>,
    goal: &AgentState<T>,
    n: usize,
    step_len: Option<T>,
) -> Result<ReferenceTrajectory<T>> {
    if n == 0 {
        return Err(DmpcError::InvalidArgument("reference horizon must be >= 1".into()));
    }
    if let Some(l) = step_len {
        if !(l > T::zero()) || !l.is_finite() {
            return Err(DmpcError::InvalidArgument("reference step length must be positive".into()));
        }
    }
    let d = x0.distance_to(goal);
    let third = d / T::lit(3.0);
    let p0 = x0.position();
    let p3 = goal.position();
    let (s0, c0) = x0.theta.sin_cos();
    let (sg, cg) = goal.theta.sin_cos();
    let p1 = [p0[0] + third * c0, p0[1] + third * s0];
    let p2 = [p3[0] - third * cg, p3[1] - third * sg];

    let tangent_eps = T::lit(1e-9);
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(*x0);
    if d == T::zero() {
        // Coincident endpoints: hold position and turn to the goal heading.
        samples.extend((1..n).map(|_| AgentState::new(p0[0], p0[1], goal.theta)));
        samples.push(*goal);
        return Ok(ReferenceTrajectory { samples });
    }
    let uniform = T::one() / T::from_usize(n).unwrap();
    let ds = match step_len {
        Some(l) => uniform.max(l / d),
        None => uniform,
    };
    for k in 1..n {
        let s = T::from_usize(k).unwrap() * ds;
        if s >= T::one() {
            samples.push(*goal);
            continue;
        }
        let m = T::one() - s;
        let three = T::lit(3.0);
        let b0 = m * m * m;
        let b1 = three * m * m * s;
        let b2 = three * m * s * s;
        let b3 = s * s * s;
        let px = b0 * p0[0] + b1 * p1[0] + b2 * p2[0] + b3 * p3[0];
        let py = b0 * p0[1] + b1 * p1[1] + b2 * p2[1] + b3 * p3[1];
        let [dx, dy] = bezier_tangent(&[p0, p1, p2, p3], s);
        let heading = if dx.hypot(dy) > tangent_eps {
            dy.atan2(dx)
        } else {
            goal.theta
        };
        samples.push(AgentState::new(px, py, heading));
    }
    samples.push(*goal);
    Ok(ReferenceTrajectory { samples })
}

/// Derivative of a cubic Bézier curve at parameter `s`.
pub fn bezier_tangent<T: Real>(ctrl: &[[T; 2]; 4], s: T) -> [T; 2] {
    let m = T::one() - s;
    let three = T::lit(3.0);
    let six = T::lit(6.0);
    let w0 = three * m * m;
    let w1 = six * m * s;
    let w2 = three * s * s;
    let mut out = [T::zero(); 2];
    for (c, o) in out.iter_mut().enumerate() {
        *o = w0 * (ctrl[1][c] - ctrl[0][c])
            + w1 * (ctrl[2][c] - ctrl[1][c])
            + w2 * (ctrl[3][c] - ctrl[2][c]);
    }
    out
}
