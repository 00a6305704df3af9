//! Comparison of two functions under a nonlinear operator
//! `K(x, u, u', ..., u^(n))` that is increasing in its top slot.
//!
//! Expressions for K use `z1` for x and `z{i+2}` for `u^(i)`, so the top
//! slot is `z{n+2}`; the bare name `x` is also bound to x.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, Program, Var};
use crate::jet::Jet;
use crate::odeint::{integrate_two_sided, Rhs, TwoSided};
use crate::operator::{closed_grid, scan_neighborhood, NeighborhoodScan, Side, Tolerances};
use crate::oracle::{FunctionOracle, Oracle};
use crate::quadrature::{gauss16, NODES};
use crate::verdict::{CheckItem, ItemStatus, VerdictReport};

/// Dyadic levels scanned for the contact neighborhood.
pub const CONTACT_LEVELS: usize = 20;

/// Samples per dyadic level.
pub const CONTACT_POINTS: usize = 512;

#[derive(Debug, Clone)]
pub struct NonlinearOperator {
    n: usize,
    source: String,
    program: Program,
}

impl NonlinearOperator {
    pub fn parse(source: &str, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("order must be positive".into()));
        }
        let ast = expr::parse(source)?;
        for v in ast.variables() {
            if let Var::Z(j) = v {
                if j == 0 || j > n + 2 {
                    return Err(Error::Argument(format!(
                        "`{source}` uses z{j}; an order-{n} operator has slots z1..z{}",
                        n + 2
                    )));
                }
            }
        }
        Ok(Self {
            n,
            source: source.to_string(),
            program: Program::compile(&ast),
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `K(x, derivs[0], ..., derivs[n])`.
    pub fn eval(&self, x: f64, derivs: &[f64]) -> Result<f64> {
        let mut z = [0.0; 16];
        if derivs.len() < z.len() {
            z[0] = x;
            z[1..=derivs.len()].copy_from_slice(derivs);
            return Ok(self.program.eval(x, &z[..=derivs.len()])?);
        }
        let z: Vec<f64> = std::iter::once(x).chain(derivs.iter().copied()).collect();
        Ok(self.program.eval(x, &z)?)
    }

    /// `∂K/∂z_{i+2}` for `i = 0..=n` by one dual evaluation per slot.
    pub fn gradient(&self, x: f64, derivs: &[f64]) -> Result<Vec<f64>> {
        (0..=self.n).map(|slot| self.partial(x, derivs, slot)).collect()
    }

    /// `∂K/∂z_{slot+2}`.
    pub fn partial(&self, x: f64, derivs: &[f64], slot: usize) -> Result<f64> {
        let xj = Jet::constant(0.0, x, 1);
        let z: Vec<Jet> = std::iter::once(xj)
            .chain(derivs.iter().enumerate().map(|(i, d)| {
                if i == slot {
                    Jet::dual(0.0, *d, 1.0)
                } else {
                    Jet::constant(0.0, *d, 1)
                }
            }))
            .collect();
        Ok(self.program.eval_jet(&xj, &z, 1)?.deriv(1))
    }

    /// `K[u](x)`.
    pub fn apply(&self, u: &dyn FunctionOracle, x: f64) -> Result<f64> {
        let j = u.jet(x, self.n)?;
        self.eval(x, j.derivs())
    }

    /// Solves `K(x, lower, t) = target` for the top slot t by Newton's method.
    pub fn solve_top(&self, x: f64, lower: &[f64], target: f64) -> Result<f64> {
        let mut d = lower.to_vec();
        d.push(0.0);
        for _ in 0..60 {
            let r = self.eval(x, &d)? - target;
            let g = self.partial(x, &d, self.n)?;
            if !(g > 0.0) {
                return Err(Error::Monotonicity {
                    x,
                    t: f64::NAN,
                    value: g,
                });
            }
            let step = r / g;
            d[self.n] -= step;
            if step.abs() <= 1e-15 * (1.0 + d[self.n].abs()) {
                return Ok(d[self.n]);
            }
        }
        let r = self.eval(x, &d)? - target;
        if r.abs() <= 1e-12 * (1.0 + target.abs()) {
            Ok(d[self.n])
        } else {
            Err(Error::Argument(format!(
                "cannot solve K = {target} for the top derivative at x = {x} (residual {r:e})"
            )))
        }
    }

    /// Right-hand side for `K[u] = -q`.
    pub fn ivp_rhs(self: &Arc<Self>, forcing: Option<Oracle>) -> Rhs {
        let k = Arc::clone(self);
        Arc::new(move |x, s| {
            let target = match &forcing {
                Some(q) => -q.value(x)?,
                None => 0.0,
            };
            k.solve_top(x, s, target)
        })
    }
}

/// Solves `K[u] = -q` through the data `init` at `x0` on `[x0 - left, x0 + right]`.
pub fn solve_for_operator(
    k: &Arc<NonlinearOperator>,
    forcing: Option<Oracle>,
    x0: f64,
    init: &[f64],
    reach: (f64, f64),
    h: f64,
) -> Result<(Arc<TwoSided>, Oracle)> {
    if init.len() != k.order() {
        return Err(Error::Argument(format!(
            "initial data has {} entries, operator order is {}",
            init.len(),
            k.order()
        )));
    }
    let t = Arc::new(integrate_two_sided(k.ivp_rhs(forcing), init, x0, reach, h)?);
    let o = t.oracle();
    Ok((t, o))
}

/// `c_i(x) = ∫_0^1 ∂K/∂z_{i+2}(x, t·u + (1-t)·v, ..., t·u^(n) + (1-t)·v^(n)) dt`
/// by 16-point Gauss–Legendre quadrature.
pub fn linearize(k: &NonlinearOperator, u: &dyn FunctionOracle, v: &dyn FunctionOracle, x: f64) -> Result<Vec<f64>> {
    let n = k.order();
    let uj = u.jet(x, n)?;
    let vj = v.jet(x, n)?;
    let mut c = vec![0.0; n + 1];
    let mut total = 0.0;
    for (t, w) in gauss16().unit_interval() {
        total += w;
        let z: Vec<f64> = uj
            .derivs()
            .iter()
            .zip(vj.derivs())
            .map(|(p, q)| t * p + (1.0 - t) * q)
            .collect();
        let g = k.gradient(x, &z)?;
        if !(g[n] > 0.0) {
            return Err(Error::Monotonicity { x, t, value: g[n] });
        }
        for (ci, gi) in c.iter_mut().zip(&g) {
            *ci += w * gi;
        }
    }
    Ok(c.into_iter().map(|ci| ci / total).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientSample {
    pub x: f64,
    pub c: Vec<f64>,
    /// `|Σ c_i w^(i) - (K[u] - K[v])| / (1 + |K[u]| + |K[v]|)`.
    pub identity_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignPatternReport {
    pub n: usize,
    pub parity: &'static str,
    pub x0: f64,
    pub reach: f64,
    pub left_required: &'static str,
    pub right_required: &'static str,
    pub left: NeighborhoodScan,
    pub right: NeighborhoodScan,
    /// Radius on which both one-sided patterns hold.
    pub delta: Option<f64>,
    pub traces: Vec<CoefficientSample>,
    /// `c_i / c_n` at x0 for `i < n`: coefficients of the induced linear problem.
    pub induced_coefficients: Vec<f64>,
    pub max_identity_residual: f64,
    /// Largest sampled `|∂K/∂z_j|` along the segment.
    pub sampled_lipschitz: f64,
    pub quadrature_nodes: usize,
    pub verdict: VerdictReport,
}

/// Checks the contact sign pattern of `w = u - v` about `x0`.
///
/// Hypotheses: `K[u] ≤ K[v]` on `[x0 - reach, x0 + reach]` and contact of
/// order n-1 at x0. Conclusions: `w ≤ 0` to the right; to the left `w ≤ 0`
/// for even n and `w ≥ 0` for odd n, each on a dyadic radius of at least 8h.
pub fn compare_contact(
    k: &NonlinearOperator,
    u: &dyn FunctionOracle,
    v: &dyn FunctionOracle,
    x0: f64,
    reach: f64,
    h: f64,
    tol: Tolerances,
) -> Result<SignPatternReport> {
    let n = k.order();
    let odd = n % 2 == 1;
    let mut verdict = VerdictReport::new("compare_contact");

    let grid = closed_grid(x0 - reach, x0 + reach, 1025);
    let diffs = grid
        .par_iter()
        .map(|&x| Ok(k.apply(u, x)? - k.apply(v, x)?))
        .collect::<Result<Vec<f64>>>()?;
    let (mut worst, mut max_abs) = (0, 0.0f64);
    for (i, d) in diffs.iter().enumerate() {
        if *d > diffs[worst] {
            worst = i;
        }
        max_abs = max_abs.max(d.abs());
    }
    verdict.hypothesis(
        CheckItem::pass("operator_inequality", diffs[worst] <= tol.equality * (1.0 + max_abs))
            .value(diffs[worst])
            .required("K[u] - K[v] <= 0")
            .witness(grid[worst]),
    );

    let uj = u.jet(x0, n)?;
    let vj = v.jet(x0, n)?;
    for i in 0..n {
        let w = uj.deriv(i) - vj.deriv(i);
        verdict.hypothesis(
            CheckItem::pass(format!("contact_order_{i}"), w.abs() <= tol.equality)
                .value(w)
                .required("w^(i)(x0) = 0"),
        );
    }

    let w = |x: f64| -> Result<f64> { Ok(u.value(x)? - v.value(x)?) };
    let floor = -tol.positivity;
    let right = scan_neighborhood(x0, Side::Right, reach, CONTACT_LEVELS, CONTACT_POINTS, |x| Ok(-w(x)?), |m| {
        m >= floor
    })?;
    let left_sign = if odd { 1.0 } else { -1.0 };
    let left = scan_neighborhood(
        x0,
        Side::Left,
        reach,
        CONTACT_LEVELS,
        CONTACT_POINTS,
        |x| Ok(left_sign * w(x)?),
        |m| m >= floor,
    )?;
    let min_radius = 8.0 * h;
    let side_item = |name: &str, scan: &NeighborhoodScan, required: &str| {
        let status = match scan.radius {
            Some(r) if r >= min_radius => ItemStatus::Pass,
            Some(_) => ItemStatus::Undetermined,
            None => ItemStatus::Fail,
        };
        let mut item = CheckItem::new(name, status)
            .required(required.to_string())
            .margin(scan.margin)
            .witness(scan.worst_point);
        if let Some(r) = scan.radius {
            item = item.value(r);
        }
        item
    };
    let left_required = if odd { "u >= v" } else { "u <= v" };
    verdict.conclusion(side_item("left_pattern", &left, left_required));
    verdict.conclusion(side_item("right_pattern", &right, "u <= v"));
    let delta = match (left.radius, right.radius) {
        (Some(l), Some(r)) => Some(l.min(r)),
        _ => None,
    };

    let trace_points = closed_grid(x0 - reach, x0 + reach, 17);
    let traces = trace_points
        .par_iter()
        .map(|&x| -> Result<(CoefficientSample, f64)> {
            let c = linearize(k, u, v, x)?;
            let uj = u.jet(x, n)?;
            let vj = v.jet(x, n)?;
            let ku = k.eval(x, uj.derivs())?;
            let kv = k.eval(x, vj.derivs())?;
            let lhs: f64 = (0..=n).map(|i| c[i] * (uj.deriv(i) - vj.deriv(i))).sum();
            let residual = (lhs - (ku - kv)).abs() / (1.0 + ku.abs() + kv.abs());
            let mut lip: f64 = 0.0;
            for (t, _) in gauss16().unit_interval() {
                let z: Vec<f64> = uj
                    .derivs()
                    .iter()
                    .zip(vj.derivs())
                    .map(|(p, q)| t * p + (1.0 - t) * q)
                    .collect();
                for g in k.gradient(x, &z)? {
                    lip = lip.max(g.abs());
                }
            }
            Ok((
                CoefficientSample {
                    x,
                    c,
                    identity_residual: residual,
                },
                lip,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let sampled_lipschitz = traces.iter().map(|t| t.1).fold(0.0, f64::max);
    let traces: Vec<CoefficientSample> = traces.into_iter().map(|t| t.0).collect();
    let max_identity_residual = traces.iter().map(|t| t.identity_residual).fold(0.0, f64::max);
    let c0 = linearize(k, u, v, x0)?;
    let induced_coefficients = c0[..n].iter().map(|ci| ci / c0[n]).collect::<Vec<_>>();

    verdict
        .note("c_i integrates the partial of K in slot z{i+2}; z1 is x")
        .note("the sign pattern is scanned on dyadic radii reach·2^-j with 512 samples each")
        .detail("delta", delta)
        .detail("induced_coefficients", &induced_coefficients)
        .detail("sampled_lipschitz", sampled_lipschitz)
        .detail("max_identity_residual", max_identity_residual)
        .detail("quadrature_nodes", NODES);
    let verdict = verdict.finish();
    Ok(SignPatternReport {
        n,
        parity: if odd { "odd" } else { "even" },
        x0,
        reach,
        left_required,
        right_required: "u <= v",
        left,
        right,
        delta,
        traces,
        induced_coefficients,
        max_identity_residual,
        sampled_lipschitz,
        quadrature_nodes: NODES,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{constant, expr};
    use crate::verdict::Status;

    #[test]
    fn pure_top_derivative() {
        let k = NonlinearOperator::parse("z5", 3).unwrap();
        let c = linearize(&k, expr("sin(x)").unwrap().as_ref(), expr("x^2").unwrap().as_ref(), 0.3).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_segment() {
        let k = NonlinearOperator::parse("z4 + sin(z2)", 2).unwrap();
        let u = expr("x^2 + 1").unwrap();
        let c = linearize(&k, u.as_ref(), u.as_ref(), 0.5).unwrap();
        assert!((c[0] - 1.25f64.cos()).abs() < 1e-15);
        assert!((c[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_integrand() {
        let k = NonlinearOperator::parse("z4 + z2^2", 2).unwrap();
        let c = linearize(&k, expr("x").unwrap().as_ref(), constant(0.0).as_ref(), 1.0).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn monotonicity_violation() {
        let k = NonlinearOperator::parse("-z4", 2).unwrap();
        let r = linearize(&k, expr("x").unwrap().as_ref(), constant(0.0).as_ref(), 1.0);
        assert!(matches!(r, Err(Error::Monotonicity { .. })));
    }

    #[test]
    fn slot_range() {
        assert!(NonlinearOperator::parse("z6", 3).is_err());
        assert!(NonlinearOperator::parse("z0 + z5", 3).is_err());
    }

    #[test]
    fn contact_examples() {
        let tol = Tolerances::default();
        let k = NonlinearOperator::parse("z4", 2).unwrap();
        let r = compare_contact(&k, constant(0.0).as_ref(), expr("x^2").unwrap().as_ref(), 0.0, 1.0, 1e-3, tol)
            .unwrap();
        assert_eq!(r.verdict.status, Status::Holds);
        let k = NonlinearOperator::parse("z5", 3).unwrap();
        let r = compare_contact(&k, constant(0.0).as_ref(), expr("x^3").unwrap().as_ref(), 0.0, 1.0, 1e-3, tol)
            .unwrap();
        assert_eq!(r.verdict.status, Status::Holds);
        assert_eq!(r.left_required, "u >= v");
        let u = expr("cos(x)").unwrap();
        let r = compare_contact(&k, u.as_ref(), u.as_ref(), 0.0, 1.0, 1e-3, tol).unwrap();
        assert_eq!(r.verdict.status, Status::Holds);
        assert_eq!(r.delta, Some(1.0));
        assert_eq!(r.left.margin, 0.0);
    }

    #[test]
    fn newton_top_slot() {
        let k = NonlinearOperator::parse("z4 + z4^3 + sin(z2)", 2).unwrap();
        let t = k.solve_top(0.0, &[0.5, 0.0], 2.0).unwrap();
        assert!((t + t.powi(3) + 0.5f64.sin() - 2.0).abs() < 1e-13);
    }
}
