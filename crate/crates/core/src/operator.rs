//! Linear differential operators `L[u] = u^(n) + a_{n-1} u^(n-1) + ... + a_0 u`
//! and pointwise checks of the hypotheses placed on `u`.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, JetError};
use crate::oracle::{self, FunctionOracle, Oracle, Reflected};

/// Grid size used to sample the coefficient bound.
pub const BOUND_GRID: usize = 4096;

/// Default grid size for inequality scans.
pub const DEFAULT_GRID: usize = 4096;

/// Deepest rung of the dyadic ladder.
pub const LADDER_DEPTH: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute tolerance for equalities such as `u(a) = 0`.
    pub equality: f64,
    /// Margin a quantity must clear to count as strictly signed.
    pub positivity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            equality: 1e-8,
            positivity: 1e-10,
        }
    }
}

#[derive(Clone)]
pub struct LinearOperator {
    coeffs: Vec<Oracle>,
    a: f64,
    b: f64,
    /// Declared or inherited lower limit for the bound.
    floor: f64,
    sampled: Arc<OnceLock<f64>>,
}

impl std::fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearOperator")
            .field("order", &self.order())
            .field("coeffs", &self.describe_coefficients())
            .field("interval", &(self.a, self.b))
            .field("bound", &self.bound())
            .finish()
    }
}

impl LinearOperator {
    /// `coeffs[i]` is `a_i`; the order is `coeffs.len()`.
    pub fn new(coeffs: Vec<Oracle>, a: f64, b: f64) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::Argument(format!(
                "operator order must be at least 2, got {}",
                coeffs.len()
            )));
        }
        Self::new_any_order(coeffs, a, b)
    }

    /// As [`LinearOperator::new`] but accepting order 1, which only arises
    /// internally at the bottom of a reduction chain.
    pub(crate) fn new_any_order(coeffs: Vec<Oracle>, a: f64, b: f64) -> Result<Self> {
        let op = Self::new_lazy(coeffs, a, b)?;
        let sampled = sample_bound(&op.coeffs, a, b)?;
        op.sampled.get_or_init(|| sampled);
        Ok(op)
    }

    /// Defers bound sampling until [`LinearOperator::bound`] is first called;
    /// a sampling failure then reads as an infinite bound.
    pub(crate) fn new_lazy(coeffs: Vec<Oracle>, a: f64, b: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Argument("operator needs at least one coefficient".into()));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Argument(format!("need a < b, got [{a}, {b}]")));
        }
        Ok(Self {
            coeffs,
            a,
            b,
            floor: 0.0,
            sampled: Arc::new(OnceLock::new()),
        })
    }

    pub fn from_exprs<S: AsRef<str>>(coeffs: &[S], a: f64, b: f64) -> Result<Self> {
        let coeffs = coeffs
            .iter()
            .map(|s| oracle::expr(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(coeffs, a, b)
    }

    /// `d^n/dx^n` on `[a, b]`.
    pub fn pure(n: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(vec![oracle::constant(0.0); n], a, b)
    }

    /// Raises the bound to `max(declared, sampled)`.
    pub fn with_declared_bound(mut self, declared: f64) -> Self {
        if declared.is_finite() {
            self.floor = declared;
        }
        self
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficients(&self) -> &[Oracle] {
        &self.coeffs
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn span(&self) -> f64 {
        self.b - self.a
    }

    /// Coefficient bound C in use.
    pub fn bound(&self) -> f64 {
        self.sampled_bound().max(self.floor)
    }

    /// Bound obtained by sampling alone.
    pub fn sampled_bound(&self) -> f64 {
        *self
            .sampled
            .get_or_init(|| sample_bound(&self.coeffs, self.a, self.b).unwrap_or(f64::INFINITY))
    }

    pub fn describe_coefficients(&self) -> Vec<String> {
        self.coeffs.iter().map(|c| c.describe()).collect()
    }

    /// Same coefficients on a sub-interval.
    pub fn restricted(&self, a: f64, b: f64) -> Result<Self> {
        let mut op = Self::new_any_order(self.coeffs.clone(), a, b)?;
        if self.floor > self.sampled_bound() {
            op.floor = self.floor;
        }
        Ok(op)
    }

    /// Operator on `[p, 2p - a]` (for `p = b`) with `ā_i(x) = (-1)^(n-i) a_i(2p - x)`.
    ///
    /// If `L[u] = r` then `L̄[ū] = r(2p - x)` for `ū(x) = (-1)^n u(2p - x)`.
    pub fn reflect_about(&self, pivot: f64) -> Result<Self> {
        let n = self.order();
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let sign = if (n - i) % 2 == 0 { 1.0 } else { -1.0 };
                Reflected::oracle(c.clone(), pivot, sign)
            })
            .collect();
        let (lo, hi) = reflect_interval(self.a, self.b, pivot);
        let mut op = Self::new_any_order(coeffs, lo, hi)?;
        op.floor = self.bound();
        Ok(op)
    }

    /// `L[u](x)`.
    pub fn apply(&self, u: &dyn FunctionOracle, x: f64) -> Result<f64> {
        let n = self.order();
        let j = u.jet(x, n)?;
        self.apply_jet(&j)
    }

    /// `L[u]` from a jet of order at least n.
    pub fn apply_jet(&self, j: &Jet) -> Result<f64> {
        let n = self.order();
        let x = j.point();
        let mut acc = j.deriv(n);
        for (i, c) in self.coeffs.iter().enumerate() {
            acc += c.value(x)? * j.deriv(i);
        }
        Ok(acc)
    }

    /// Coefficient values `a_0(x), ..., a_{n-1}(x)`.
    pub fn coefficient_values(&self, x: f64) -> Result<Vec<f64>> {
        self.coeffs.iter().map(|c| c.value(x)).collect()
    }
}

/// Image of `[lo, hi]` under `x ↦ 2p - x`.
pub fn reflect_interval(lo: f64, hi: f64, pivot: f64) -> (f64, f64) {
    (2.0 * pivot - hi, 2.0 * pivot - lo)
}

/// Sup of |a_i| sampled on a closed grid, refined by ternary search around
/// the largest grid maxima.
fn sample_bound(coeffs: &[Oracle], a: f64, b: f64) -> Result<f64> {
    let grid = closed_grid(a, b, BOUND_GRID);
    let h = (b - a) / (BOUND_GRID - 1) as f64;
    let per_coeff: Vec<f64> = coeffs
        .par_iter()
        .map(|c| -> Result<f64> {
            let vals = grid
                .iter()
                .map(|&x| c.value(x).map(f64::abs))
                .collect::<Result<Vec<f64>>>()?;
            if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::Argument(format!(
                    "coefficient {} is not finite at x = {}",
                    c.describe(),
                    grid[bad]
                )));
            }
            let mut peaks: Vec<usize> = (0..vals.len())
                .filter(|&i| {
                    (i == 0 || vals[i] >= vals[i - 1]) && (i + 1 == vals.len() || vals[i] >= vals[i + 1])
                })
                .collect();
            peaks.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
            peaks.truncate(16);
            let mut best = vals.iter().cloned().fold(0.0, f64::max);
            for i in peaks {
                let mut lo = (grid[i] - h).max(a);
                let mut hi = (grid[i] + h).min(b);
                let f = |x: f64| c.value(x).map(f64::abs).unwrap_or(0.0);
                for _ in 0..40 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if f(m1) < f(m2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                let v = f(0.5 * (lo + hi));
                if v.is_finite() {
                    best = best.max(v);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_coeff.into_iter().fold(0.0, f64::max))
}

/// `count` equally spaced points including both ends.
pub fn closed_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { b } else { a + i as f64 * h })
                .collect()
        }
    }
}

/// `count` equally spaced points strictly inside `(a, b)`.
pub fn interior_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    let h = (b - a) / (count + 1) as f64;
    (1..=count).map(|i| a + i as f64 * h).collect()
}

pub fn apply_operator(op: &LinearOperator, u: &dyn FunctionOracle, x: f64) -> Result<f64> {
    op.apply(u, x)
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityCheck {
    pub max_value: f64,
    pub worst_point: f64,
    /// `1 + max |L[u]|` over the grid.
    pub scale: f64,
    pub tol: f64,
    pub points: usize,
    pub pass: bool,
}

/// Checks `L[u] ≤ 0` on the grid: passes iff `max L[u] ≤ tol · scale`.
/// Ties for the worst point go to the smallest x.
pub fn verify_inequality(
    op: &LinearOperator,
    u: &dyn FunctionOracle,
    grid: &[f64],
    tol: f64,
) -> Result<InequalityCheck> {
    if grid.is_empty() {
        return Err(Error::Argument("empty grid".into()));
    }
    let values = grid
        .par_iter()
        .map(|&x| op.apply(u, x))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = 0;
    let mut max_abs: f64 = 0.0;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Argument(format!("L[u] is not finite at x = {}", grid[i])));
        }
        if *v > values[worst] || (*v == values[worst] && grid[i] < grid[worst]) {
            worst = i;
        }
        max_abs = max_abs.max(v.abs());
    }
    let scale = 1.0 + max_abs;
    Ok(InequalityCheck {
        max_value: values[worst],
        worst_point: grid[worst],
        scale,
        tol,
        points: grid.len(),
        pass: values[worst] <= tol * scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Neighborhood to the right of the point (left endpoint a).
    Right,
    /// Neighborhood to the left of the point (right endpoint b).
    Left,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

/// Jet at `x`, or its one-sided limit from `side` when the oracle is not
/// differentiable exactly at `x`. The flag reports whether the limit was used.
pub fn one_sided_jet(u: &dyn FunctionOracle, x: f64, side: Side, order: usize) -> Result<(Jet, bool)> {
    match u.jet(x, order) {
        Ok(j) => Ok((j, false)),
        Err(Error::Jet(JetError::NonDifferentiable { .. } | JetError::Singular(_)))
        | Err(Error::Eval(_)) => {
            let eps = 1e-7 * x.abs().max(1.0);
            let near = u.jet(x + side.sign() * eps, order)?;
            let nearer = u.jet(x + side.sign() * 0.5 * eps, order)?;
            let d: Vec<f64> = near
                .derivs()
                .iter()
                .zip(nearer.derivs())
                .map(|(p, q)| 2.0 * q - p)
                .collect();
            Ok((Jet::new(x, &d)?, true))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JetCheckItem {
    pub order: usize,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndpointJetCheck {
    pub endpoint: f64,
    /// Orders `0..=n-2`, each required to vanish.
    pub items: Vec<JetCheckItem>,
    /// `u^(n-1)(endpoint)`.
    pub top: f64,
    pub tol: f64,
    pub one_sided_limit: bool,
}

impl EndpointJetCheck {
    pub fn pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }
}

/// Checks `u(e) = u'(e) = ... = u^(n-2)(e) = 0` and reports `u^(n-1)(e)`.
pub fn endpoint_jet_check(
    u: &dyn FunctionOracle,
    endpoint: f64,
    side: Side,
    n: usize,
    tol: f64,
) -> Result<EndpointJetCheck> {
    if n == 0 {
        return Err(Error::Argument("order must be positive".into()));
    }
    let (j, limit) = one_sided_jet(u, endpoint, side, n - 1)?;
    let items = (0..n - 1)
        .map(|k| JetCheckItem {
            order: k,
            value: j.deriv(k),
            pass: j.deriv(k).abs() <= tol,
        })
        .collect();
    Ok(EndpointJetCheck {
        endpoint,
        items,
        top: j.deriv(n - 1),
        tol,
        one_sided_limit: limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SequenceStatus {
    Pass,
    Fail,
    Undetermined,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderPoint {
    pub j: u32,
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceCheck {
    pub status: SequenceStatus,
    pub sign: f64,
    /// Deepest rung where `|u| > tol_pos`.
    pub deepest_resolvable: Option<u32>,
    /// Resolvable rungs with `sign·u > tol_pos`.
    pub witnesses: Vec<LadderPoint>,
    pub ladder: Vec<LadderPoint>,
    pub tol_pos: f64,
    pub note: &'static str,
}

impl SequenceCheck {
    /// Deepest witness, if any.
    pub fn deepest_witness(&self) -> Option<&LadderPoint> {
        self.witnesses.last()
    }
}

pub const LADDER_NOTE: &str =
    "a sequence condition is a statement about limit points; it is checked on the dyadic ladder \
     endpoint ± span·2^-j, j = 1..40, and decided by the deepest rung where |u| exceeds the \
     positivity tolerance";

/// Scans `endpoint + side·span·2^-j`, `j = 1..=40`, for `sign·u > tol_pos`.
///
/// Rungs where `|u| ≤ tol_pos` are unresolvable. The verdict follows the
/// deepest resolvable rung: PASS if `sign·u` is positive there, FAIL if it is
/// negative, UNDETERMINED if no rung is resolvable.
pub fn detect_sequence_condition(
    u: &dyn FunctionOracle,
    endpoint: f64,
    side: Side,
    span: f64,
    sign: f64,
    tol_pos: f64,
) -> Result<SequenceCheck> {
    let ladder = (1..=LADDER_DEPTH)
        .map(|j| {
            let x = endpoint + side.sign() * span * 0.5f64.powi(j as i32);
            Ok(LadderPoint {
                j,
                x,
                value: u.value(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let deepest = ladder.iter().rev().find(|p| p.value.abs() > tol_pos);
    let status = match deepest {
        None => SequenceStatus::Undetermined,
        Some(p) if sign * p.value > 0.0 => SequenceStatus::Pass,
        Some(_) => SequenceStatus::Fail,
    };
    let witnesses = ladder
        .iter()
        .filter(|p| sign * p.value > tol_pos)
        .cloned()
        .collect();
    Ok(SequenceCheck {
        status,
        sign,
        deepest_resolvable: deepest.map(|p| p.j),
        witnesses,
        ladder,
        tol_pos,
        note: LADDER_NOTE,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NeighborhoodScan {
    /// Largest dyadic radius from which every finer level passes.
    pub radius: Option<f64>,
    /// Minimum of the scanned quantity over the accepted levels.
    pub margin: f64,
    pub worst_point: f64,
    pub levels: usize,
    pub points_per_level: usize,
}

/// Scans `g` on one-sided dyadic neighborhoods `(e, e + side·span·2^-j]`,
/// `j = 0..levels`, with `points` samples each. A level passes when `ok`
/// accepts its minimum of `g`; the detected radius is the largest one from
/// which all finer levels pass.
pub fn scan_neighborhood<G, P>(
    endpoint: f64,
    side: Side,
    span: f64,
    levels: usize,
    points: usize,
    g: G,
    ok: P,
) -> Result<NeighborhoodScan>
where
    G: Fn(f64) -> Result<f64> + Sync,
    P: Fn(f64) -> bool,
{
    let per_level = (0..levels)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let r = span * 0.5f64.powi(j as i32);
            let mut min = f64::INFINITY;
            let mut at = endpoint;
            for i in 1..=points {
                let x = endpoint + side.sign() * r * i as f64 / points as f64;
                let v = g(x)?;
                if v < min || v.is_nan() {
                    min = v;
                    at = x;
                }
            }
            Ok((min, at))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut first = levels;
    for j in (0..levels).rev() {
        if ok(per_level[j].0) {
            first = j;
        } else {
            break;
        }
    }
    let mut out = NeighborhoodScan {
        radius: None,
        margin: f64::NAN,
        worst_point: endpoint,
        levels,
        points_per_level: points,
    };
    if first < levels {
        out.radius = Some(span * 0.5f64.powi(first as i32));
        let (m, at) = per_level[first..]
            .iter()
            .cloned()
            .fold((f64::INFINITY, endpoint), |acc, p| if p.0 < acc.0 { p } else { acc });
        out.margin = m;
        out.worst_point = at;
    } else if let Some((m, at)) = per_level.last() {
        out.margin = *m;
        out.worst_point = *at;
    }
    Ok(out)
}

/// `-u` with the sign flipped; convenience for symmetric checks.
pub fn negate(u: Oracle) -> Oracle {
    oracle::negated(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::expr;

    #[test]
    fn apply_examples() {
        let l3 = LinearOperator::pure(3, 0.0, 1.0).unwrap();
        let u = expr("x^2").unwrap();
        assert_eq!(l3.apply(u.as_ref(), 0.3).unwrap(), 0.0);
        let l = LinearOperator::from_exprs(&["0", "1", "0"], 0.0, 7.0).unwrap();
        let s = expr("sin(x)").unwrap();
        for x in [0.1, 1.0, 4.0] {
            assert!(l.apply(s.as_ref(), x).unwrap().abs() < 1e-15);
        }
        let l2 = LinearOperator::pure(2, 0.0, 1.0).unwrap();
        assert_eq!(l2.apply(expr("x - x^2").unwrap().as_ref(), 0.4).unwrap(), -2.0);
    }

    #[test]
    fn order_one_rejected() {
        assert!(LinearOperator::from_exprs(&["1"], 0.0, 1.0).is_err());
        assert!(LinearOperator::from_exprs(&["1", "0"], 1.0, 1.0).is_err());
    }

    #[test]
    fn bound_covers_smooth_peak() {
        let op = LinearOperator::from_exprs(&["sin(17*x)", "2*cos(3*x + 0.1234)"], 0.0, 2.0).unwrap();
        assert!(op.bound() >= 2.0 - 1e-15);
        assert!(op.bound() <= 2.0 + 1e-12);
    }

    #[test]
    fn inequality_examples() {
        let l2 = LinearOperator::pure(2, 0.0, 1.0).unwrap();
        let grid = interior_grid(0.0, 1.0, 64);
        let r = verify_inequality(&l2, expr("x - x^2").unwrap().as_ref(), &grid, 1e-8).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_value, -2.0);
        let r = verify_inequality(&l2, expr("x^2").unwrap().as_ref(), &grid, 1e-8).unwrap();
        assert!(!r.pass);
        assert_eq!(r.max_value, 2.0);
        assert_eq!(r.worst_point, grid[0]);
    }

    #[test]
    fn endpoint_jets() {
        let u = expr("x^2 - x^4").unwrap();
        let c = endpoint_jet_check(u.as_ref(), 0.0, Side::Right, 3, 1e-8).unwrap();
        assert!(c.pass());
        assert_eq!(c.items.len(), 2);
        assert_eq!(c.top, 2.0);
        let s = expr("sin(x)").unwrap();
        let c = endpoint_jet_check(s.as_ref(), 0.0, Side::Right, 2, 1e-8).unwrap();
        assert!(c.pass());
        assert_eq!(c.top, 1.0);
    }

    #[test]
    fn one_sided_limit_for_abs() {
        let u = expr("abs(x)^3").unwrap();
        let (j, limit) = one_sided_jet(u.as_ref(), 0.0, Side::Right, 2).unwrap();
        assert!(limit);
        assert!(j.derivs().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sequence_examples() {
        let u = expr("x - x^2").unwrap();
        let r = detect_sequence_condition(u.as_ref(), 0.0, Side::Right, 1.0, 1.0, 1e-10).unwrap();
        assert_eq!(r.status, SequenceStatus::Pass);
        assert!(r.witnesses.len() > 20);
        let s = expr("sin(x)").unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        let r = detect_sequence_condition(s.as_ref(), two_pi, Side::Left, two_pi, -1.0, 1e-10).unwrap();
        assert_eq!(r.status, SequenceStatus::Pass);
        let r = detect_sequence_condition(expr("-x").unwrap().as_ref(), 0.0, Side::Right, 1.0, 1.0, 1e-10)
            .unwrap();
        assert_eq!(r.status, SequenceStatus::Fail);
        let r = detect_sequence_condition(expr("0").unwrap().as_ref(), 0.0, Side::Right, 1.0, 1.0, 1e-10)
            .unwrap();
        assert_eq!(r.status, SequenceStatus::Undetermined);
    }

    #[test]
    fn neighborhood_of_positivity() {
        let u = expr("x*(0.25 - x)").unwrap();
        let r = scan_neighborhood(0.0, Side::Right, 1.0, 20, 512, |x| u.value(x), |m| m > 0.0).unwrap();
        assert_eq!(r.radius, Some(0.125));
        assert!(r.margin > 0.0);
        let r = scan_neighborhood(0.0, Side::Right, 1.0, 20, 512, |x| Ok(-x), |m| m > 0.0).unwrap();
        assert_eq!(r.radius, None);
    }

    #[test]
    fn reflection_of_operator() {
        // u = x - x^2 on [0, 1], L = d^2 + x d + 1 → L̄[ū](x) = L[u](2 - x)
        let op = LinearOperator::from_exprs(&["1", "x"], 0.0, 1.0).unwrap();
        let r = op.reflect_about(1.0).unwrap();
        assert_eq!(r.interval(), (1.0, 2.0));
        let u = expr("x - x^2").unwrap();
        let ubar = Reflected::oracle(u.clone(), 1.0, 1.0);
        for x in [1.1, 1.5, 1.9] {
            let lhs = r.apply(ubar.as_ref(), x).unwrap();
            let rhs = op.apply(u.as_ref(), 2.0 - x).unwrap();
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }
}
