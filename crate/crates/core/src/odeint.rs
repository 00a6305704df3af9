//! Fixed-step classical Runge–Kutta integration of scalar n-th order ODEs in
//! companion form, and a shooting solver for second-order linear BVPs.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::operator::LinearOperator;
use crate::oracle::{Backing, FunctionOracle, Oracle};

/// Right-hand side `u^(n) = rhs(x, [u, u', ..., u^(n-1)])`.
pub type Rhs = Arc<dyn Fn(f64, &[f64]) -> Result<f64> + Send + Sync>;

/// States whose magnitude exceeds this truncate the trajectory.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Grid cells used when no step is given.
pub const DEFAULT_STEPS: usize = 4096;

pub fn default_step(span: f64) -> f64 {
    span / DEFAULT_STEPS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    /// Last grid point with a valid state.
    pub last_valid: f64,
    pub reason: TruncationReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationReason {
    Threshold,
    NonFinite,
    RhsError,
}

/// Numerical solution on a uniform grid `a + i·h`.
#[derive(Clone)]
pub struct Trajectory {
    a: f64,
    h: f64,
    dim: usize,
    /// Row-major: `states[i * dim + k]` is `u^(k)` at node i.
    states: Vec<f64>,
    rhs: Rhs,
    requested_end: f64,
    truncation: Option<Truncation>,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("a", &self.a)
            .field("h", &self.h)
            .field("dim", &self.dim)
            .field("nodes", &self.len())
            .field("truncation", &self.truncation)
            .finish()
    }
}

fn derivative(rhs: &Rhs, x: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
    let n = s.len();
    out[..n - 1].copy_from_slice(&s[1..]);
    out[n - 1] = rhs(x, s)?;
    Ok(())
}

/// One classical RK4 step of signed size `h`.
fn rk4_step(rhs: &Rhs, x: f64, s: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = s.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    derivative(rhs, x, s, &mut k1)?;
    for i in 0..n {
        tmp[i] = s[i] + 0.5 * h * k1[i];
    }
    derivative(rhs, x + 0.5 * h, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = s[i] + 0.5 * h * k2[i];
    }
    derivative(rhs, x + 0.5 * h, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = s[i] + h * k3[i];
    }
    derivative(rhs, x + h, &tmp, &mut k4)?;
    Ok((0..n)
        .map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

impl Trajectory {
    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// ODE order n (state dimension).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.a + i as f64 * self.h
    }

    /// Last node with a valid state.
    pub fn end(&self) -> f64 {
        self.x(self.len() - 1)
    }

    pub fn requested_end(&self) -> f64 {
        self.requested_end
    }

    pub fn truncation(&self) -> Option<Truncation> {
        self.truncation
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn rhs(&self) -> &Rhs {
        &self.rhs
    }

    /// State at an arbitrary x in `[start, end]`: the stored state when x is a
    /// node, otherwise one RK4 sub-step from the nearest node.
    pub fn state_at(&self, x: f64) -> Result<Vec<f64>> {
        let end = self.end();
        let slack = 1e-9 * self.h;
        if !(x >= self.a - slack && x <= end + slack) {
            return Err(Error::OutOfRange {
                x,
                lo: self.a,
                hi: end,
            });
        }
        let pos = (x - self.a) / self.h;
        let i = (pos.round().max(0.0) as usize).min(self.len() - 1);
        let dx = x - self.x(i);
        let s = self.state(i);
        if dx.abs() <= slack {
            return Ok(s.to_vec());
        }
        rk4_step(&self.rhs, self.x(i), s, dx)
    }

    /// Jet of the solution up to order `dim` (the top slot from the right-hand side).
    pub fn jet_at(&self, x: f64, order: usize) -> Result<Jet> {
        if order > self.dim {
            return Err(Error::Capability(format!(
                "trajectory of an order-{} ODE yields derivatives up to order {}, {order} requested",
                self.dim, self.dim
            )));
        }
        let mut s = self.state_at(x)?;
        if order == self.dim {
            let top = (self.rhs)(x, &s)?;
            s.push(top);
        }
        s.truncate(order + 1);
        Ok(Jet::new(x, &s)?)
    }

    /// CSV with columns `x, u, u', ..., u^(n)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["x".to_string(), "u".to_string()];
        for k in 1..=self.dim {
            header.push(format!("u^({k})"));
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let x = self.x(i);
            let s = self.state(i);
            let top = (self.rhs)(x, s).unwrap_or(f64::NAN);
            let mut row = vec![format!("{x}")];
            row.extend(s.iter().map(|v| format!("{v}")));
            row.push(format!("{top}"));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn oracle(self: &Arc<Self>) -> Oracle {
        Arc::new(TrajectoryOracle(Arc::clone(self)))
    }
}

/// Oracle view of a trajectory.
pub struct TrajectoryOracle(pub Arc<Trajectory>);

impl FunctionOracle for TrajectoryOracle {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        self.0.jet_at(x, order)
    }

    fn value(&self, x: f64) -> Result<f64> {
        Ok(self.0.state_at(x)?[0])
    }

    fn max_order(&self) -> usize {
        self.0.dim
    }

    fn backing(&self) -> Backing {
        Backing::Trajectory
    }

    fn describe(&self) -> String {
        format!(
            "trajectory(order {}, [{}, {}], h = {})",
            self.0.dim,
            self.0.a,
            self.0.end(),
            self.0.h
        )
    }
}

/// Integrates `u^(n) = rhs(x, state)` from `init` at `span.0` towards `span.1`.
///
/// The grid is the uniform partition of the span with step at most `h`.
/// Blow-up (non-finite state, |state| > [`BLOWUP_THRESHOLD`], or a failing
/// right-hand side) truncates the trajectory and records a [`Truncation`];
/// it is an error only when no step succeeds.
pub fn integrate_nonlinear_ivp(rhs: Rhs, init: &[f64], span: (f64, f64), h: f64) -> Result<Trajectory> {
    let (a, b) = span;
    if init.is_empty() {
        return Err(Error::Argument("initial state must be non-empty".into()));
    }
    if !(h > 0.0) || !(b > a) {
        return Err(Error::Argument(format!(
            "need h > 0 and a < b, got h = {h}, span = [{a}, {b}]"
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("initial state must be finite".into()));
    }
    let steps = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let dim = init.len();
    let mut states = Vec::with_capacity((steps + 1) * dim);
    states.extend_from_slice(init);
    let mut truncation = None;
    let mut current = init.to_vec();
    for i in 0..steps {
        let x = a + i as f64 * h;
        let reason = match rk4_step(&rhs, x, &current, h) {
            Err(_) => Some(TruncationReason::RhsError),
            Ok(next) => {
                if next.iter().any(|v| !v.is_finite()) {
                    Some(TruncationReason::NonFinite)
                } else if next.iter().any(|v| v.abs() > BLOWUP_THRESHOLD) {
                    Some(TruncationReason::Threshold)
                } else {
                    states.extend_from_slice(&next);
                    current = next;
                    None
                }
            }
        };
        if let Some(reason) = reason {
            if i == 0 {
                return Err(Error::BlowUp { last_valid: a });
            }
            truncation = Some(Truncation {
                last_valid: x,
                reason,
            });
            break;
        }
    }
    Ok(Trajectory {
        a,
        h,
        dim,
        states,
        rhs,
        requested_end: b,
        truncation,
    })
}

/// Right-hand side for `L[u] = -q`, i.e. `u^(n) = -Σ a_i u^(i) - q`.
pub fn linear_rhs(op: &LinearOperator, forcing: Option<Oracle>) -> Rhs {
    let coeffs = op.coefficients().to_vec();
    Arc::new(move |x, s| {
        let mut acc = match &forcing {
            Some(q) => -q.value(x)?,
            None => 0.0,
        };
        for (a, v) in coeffs.iter().zip(s) {
            acc -= a.value(x)? * v;
        }
        Ok(acc)
    })
}

/// Solves `L[u] = -q` on the operator's interval from `init` at its left end.
pub fn integrate_linear_ivp(
    op: &LinearOperator,
    forcing: Option<Oracle>,
    init: &[f64],
    h: f64,
) -> Result<Trajectory> {
    if init.len() != op.order() {
        return Err(Error::Argument(format!(
            "initial state has {} entries, operator order is {}",
            init.len(),
            op.order()
        )));
    }
    let (a, b) = op.interval();
    integrate_nonlinear_ivp(linear_rhs(op, forcing), init, (a, b), h)
}

/// Same as [`integrate_linear_ivp`] but with initial data at the right end:
/// `init[k] = u^(k)(b)`. Integrates the reflected equation for
/// `ū(x) = (-1)^n u(2b - x)` and returns an oracle for `u` on `[a, b]`.
pub fn integrate_linear_ivp_from_right(
    op: &LinearOperator,
    forcing: Option<Oracle>,
    init: &[f64],
    h: f64,
) -> Result<(Arc<Trajectory>, Oracle)> {
    let (_, b) = op.interval();
    let sigma = if op.order() % 2 == 0 { 1.0 } else { -1.0 };
    let reflected = op.reflect_about(b)?;
    let forcing = forcing.map(|q| crate::oracle::Reflected::oracle(q, b, 1.0));
    let init: Vec<f64> = init
        .iter()
        .enumerate()
        .map(|(k, v)| if k % 2 == 0 { sigma * v } else { -sigma * v })
        .collect();
    let traj = Arc::new(integrate_linear_ivp(&reflected, forcing, &init, h)?);
    let oracle = crate::oracle::Reflected::oracle(traj.oracle(), b, sigma);
    Ok((traj, oracle))
}

/// Solution of `u^(n) = rhs(x, state)` with data at an interior point `x0`,
/// integrated forward on `[x0, x0 + right]` and backward on `[x0 - left, x0]`.
#[derive(Debug, Clone)]
pub struct TwoSided {
    pub x0: f64,
    pub forward: Arc<Trajectory>,
    /// Trajectory of `ũ(s) = u(2·x0 - s)` for `s ≥ x0`.
    pub backward: Arc<Trajectory>,
}

impl TwoSided {
    pub fn interval(&self) -> (f64, f64) {
        (2.0 * self.x0 - self.backward.end(), self.forward.end())
    }

    pub fn truncated(&self) -> bool {
        self.forward.truncation().is_some() || self.backward.truncation().is_some()
    }

    pub fn jet_at(&self, x: f64, order: usize) -> Result<Jet> {
        if x >= self.x0 {
            return self.forward.jet_at(x, order);
        }
        let j = self.backward.jet_at(2.0 * self.x0 - x, order)?;
        let d: Vec<f64> = j
            .derivs()
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { *v } else { -*v })
            .collect();
        Ok(Jet::new(x, &d)?)
    }

    pub fn oracle(self: &Arc<Self>) -> Oracle {
        let this = Arc::clone(self);
        let (lo, hi) = self.interval();
        crate::oracle::FnOracle::new(
            format!("two-sided trajectory on [{lo}, {hi}] from x0 = {}", self.x0),
            move |x, m| this.jet_at(x, m),
        )
        .with_max_order(self.forward.dim())
        .into_oracle()
    }
}

pub fn integrate_two_sided(
    rhs: Rhs,
    init: &[f64],
    x0: f64,
    (left, right): (f64, f64),
    h: f64,
) -> Result<TwoSided> {
    let n = init.len();
    let forward = integrate_nonlinear_ivp(rhs.clone(), init, (x0, x0 + right), h)?;
    let flip = |s: &[f64]| -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { *v } else { -*v })
            .collect()
    };
    let top_sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let reflected: Rhs = Arc::new(move |s, st| Ok(top_sign * rhs(2.0 * x0 - s, &flip(st))?));
    let backward = integrate_nonlinear_ivp(reflected, &flip(init), (x0, x0 + left), h)?;
    Ok(TwoSided {
        x0,
        forward: Arc::new(forward),
        backward: Arc::new(backward),
    })
}

/// Shooting solver for `L[g] = -q` on `[c, d]` with `g(c) = α`, `g(d) = β`.
///
/// Secant iteration on the unknown initial slope with bisection once a sign
/// change is bracketed; converged when `|g(d) - β| ≤ 1e-10·(1 + |β|)`.
pub fn solve_second_order_bvp(
    op: &LinearOperator,
    forcing: Option<Oracle>,
    (c, alpha): (f64, f64),
    (d, beta): (f64, f64),
    h: f64,
) -> Result<Trajectory> {
    if op.order() != 2 {
        return Err(Error::Argument(format!(
            "shooting needs a second-order operator, got order {}",
            op.order()
        )));
    }
    if !(d > c) {
        return Err(Error::Argument(format!("need c < d, got [{c}, {d}]")));
    }
    let rhs = linear_rhs(op, forcing);
    let tol = 1e-10 * (1.0 + beta.abs());
    let shoot = |slope: f64| -> Result<(Trajectory, f64)> {
        let t = integrate_nonlinear_ivp(rhs.clone(), &[alpha, slope], (c, d), h)?;
        if t.truncation().is_some() {
            return Err(Error::Shooting(format!(
                "trajectory with slope {slope} blew up before x = {d}"
            )));
        }
        let r = t.last_state()[0] - beta;
        Ok((t, r))
    };
    let mut s0 = 0.0;
    let (t0, mut r0) = shoot(s0)?;
    if r0.abs() <= tol {
        return Ok(t0);
    }
    let mut s1 = (beta - alpha) / (d - c) + 1.0;
    let (mut t1, mut r1) = shoot(s1)?;
    let mut bracket: Option<(f64, f64, f64, f64)> = None;
    for _ in 0..200 {
        if r1.abs() <= tol {
            return Ok(t1);
        }
        if r0.signum() != r1.signum() {
            bracket = Some((s0, r0, s1, r1));
        }
        let mut next = if r1 != r0 {
            s1 - r1 * (s1 - s0) / (r1 - r0)
        } else {
            f64::NAN
        };
        if let Some((lo, _, hi, _)) = bracket {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
        } else if !next.is_finite() {
            return Err(Error::Shooting(
                "residual does not depend on the slope; no sign change".into(),
            ));
        }
        let (t, r) = shoot(next)?;
        if let Some((lo, rlo, hi, _)) = bracket {
            if r.signum() == rlo.signum() {
                bracket = Some((next, r, hi, 0.0));
            } else {
                bracket = Some((lo, rlo, next, r));
            }
        }
        s0 = s1;
        r0 = r1;
        s1 = next;
        r1 = r;
        t1 = t;
    }
    Err(Error::Shooting(format!(
        "no convergence in 200 iterations (residual {r1:e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{constant, expr};

    fn d2(coeffs: &[&str], a: f64, b: f64) -> LinearOperator {
        LinearOperator::from_exprs(coeffs, a, b).unwrap()
    }

    #[test]
    fn sine_quarter_period() {
        let op = d2(&["1", "0"], 0.0, std::f64::consts::FRAC_PI_2);
        let t = integrate_linear_ivp(&op, None, &[0.0, 1.0], 1e-3).unwrap();
        assert!((t.last_state()[0] - 1.0).abs() < 1e-6);
        assert!((t.end() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn exponential_growth() {
        let rhs: Rhs = Arc::new(|_, s| Ok(s[0]));
        let t = integrate_nonlinear_ivp(rhs, &[1.0], (0.0, 1.0), 1e-3).unwrap();
        assert!((t.last_state()[0] - std::f64::consts::E).abs() < 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        // Richardson: error ratio under step halving on u'' = -u
        let op = d2(&["1", "0"], 0.0, 3.0);
        let err = |h: f64| {
            let t = integrate_linear_ivp(&op, None, &[0.0, 1.0], h).unwrap();
            (t.last_state()[0] - 3.0f64.sin()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn riccati_closed_form() {
        // f'' = 3 f f' - f^3, f(0) = 1, f'(0) = 0: f = (1-x)/(1 - x + x^2/2)
        let rhs: Rhs = Arc::new(|_, s| Ok(3.0 * s[0] * s[1] - s[0].powi(3)));
        let t = integrate_nonlinear_ivp(rhs, &[1.0, 0.0], (0.0, 0.5), 0.5 / 4096.0).unwrap();
        assert!((t.last_state()[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn blow_up_is_flagged() {
        let rhs: Rhs = Arc::new(|_, s| Ok(s[0] * s[0]));
        let t = integrate_nonlinear_ivp(rhs, &[1.0], (0.0, 2.0), 1e-3).unwrap();
        let tr = t.truncation().expect("blow-up flagged");
        assert!(tr.last_valid <= 1.0);
        assert!(t.end() <= 1.0);
    }

    #[test]
    fn immediate_blow_up_is_an_error() {
        let rhs: Rhs = Arc::new(|_, _| Ok(f64::NAN));
        assert!(matches!(
            integrate_nonlinear_ivp(rhs, &[1.0], (0.0, 1.0), 0.1),
            Err(Error::BlowUp { .. })
        ));
    }

    #[test]
    fn zero_rhs_keeps_top_derivative() {
        let rhs: Rhs = Arc::new(|_, _| Ok(0.0));
        let t = integrate_nonlinear_ivp(rhs, &[0.0, 0.0, 0.0, 1.0], (0.0, 1.0), 1e-2).unwrap();
        for i in 0..t.len() {
            assert_eq!(t.state(i)[3], 1.0);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let op = d2(&["sin(3*x)", "exp(x)"], 0.0, 1.0);
        let t = integrate_linear_ivp(&op, None, &[0.0, 0.0], 1e-3).unwrap();
        assert!((0..t.len()).all(|i| t.state(i).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn off_grid_evaluation() {
        let op = d2(&["1", "0"], 0.0, 1.0);
        let t = integrate_linear_ivp(&op, None, &[0.0, 1.0], 1.0 / 256.0).unwrap();
        let x = 0.123456;
        let j = t.jet_at(x, 2).unwrap();
        assert!((j.deriv(0) - x.sin()).abs() < 1e-10);
        assert!((j.deriv(1) - x.cos()).abs() < 1e-10);
        assert!((j.deriv(2) + x.sin()).abs() < 1e-10);
        assert!(matches!(t.jet_at(x, 3), Err(Error::Capability(_))));
        assert!(matches!(t.state_at(1.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn shooting_examples() {
        let op = d2(&["0", "0"], 0.0, 1.0);
        let g = solve_second_order_bvp(&op, None, (0.0, 0.0), (1.0, 1.0), 1.0 / 1024.0).unwrap();
        for i in 0..g.len() {
            assert!((g.state(i)[0] - g.x(i)).abs() < 1e-9);
        }
        // g'' = -2 -> q = 2
        let g = solve_second_order_bvp(&op, Some(constant(2.0)), (0.0, 0.0), (1.0, 0.0), 1.0 / 1024.0)
            .unwrap();
        assert!((g.state_at(0.5).unwrap()[0] - 0.25).abs() < 1e-8);
        assert!(g.last_state()[0].abs() <= 1e-10);
    }

    #[test]
    fn right_end_initial_data() {
        // u'' = 0 with u(1) = 0, u'(1) = -1: u = 1 - x
        let op = d2(&["0", "0"], 0.0, 1.0);
        let (_, u) = integrate_linear_ivp_from_right(&op, None, &[0.0, -1.0], 1.0 / 64.0).unwrap();
        let j = u.jet(0.25, 2).unwrap();
        assert!((j.deriv(0) - 0.75).abs() < 1e-12);
        assert!((j.deriv(1) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_sided_cubic() {
        // u^(3) = 6 about x0 = 0.5 with the data of x^3
        let rhs: Rhs = Arc::new(|_, _| Ok(6.0));
        let x0 = 0.5f64;
        let t = Arc::new(
            integrate_two_sided(rhs, &[x0.powi(3), 3.0 * x0 * x0, 6.0 * x0], x0, (0.5, 0.5), 1.0 / 128.0)
                .unwrap(),
        );
        let u = t.oracle();
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let j = u.jet(x, 3).unwrap();
            assert!((j.deriv(0) - x.powi(3)).abs() < 1e-13);
            assert!((j.deriv(1) - 3.0 * x * x).abs() < 1e-13);
            assert!((j.deriv(3) - 6.0).abs() < 1e-13);
        }
    }

    #[test]
    fn csv_export() {
        let op = d2(&["0", "0"], 0.0, 1.0);
        let t = integrate_linear_ivp(&op, Some(expr("1").unwrap()), &[0.0, 1.0], 0.5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,u,u^(1),u^(2)");
        assert_eq!(lines.next().unwrap(), "0,0,1,-1");
        assert_eq!(text.lines().count(), 4);
    }
}
