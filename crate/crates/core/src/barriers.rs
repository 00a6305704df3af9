//! Barrier functions with explicitly chosen parameters and sampled sign
//! certificates for `L[barrier]`.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::literal;
use crate::operator::{closed_grid, LinearOperator};
use crate::oracle::{self, Oracle};

/// Minimum certified margin.
pub const CERT_MARGIN: f64 = 1e-10;

/// Default certificate grid size.
pub const CERT_GRID: usize = 4096;

/// Factor applied to upper bounds on "sufficiently small" parameters.
pub const SHRINK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    /// `e^{γδ} - e^{γ(x-a)}` on `[a, a+δ)`, `L[h] < 0`.
    SmallIntervalH,
    /// `e^{λ(x-a)} - 1` on `[a, b]`, `L > 0`.
    ExpSubsolution,
    /// `e^{θη} - e^{-θ(x-a)}` on `[a, a+η]`, third order, `L[m] > 0`.
    ThirdOrderM,
    /// `sin(π/2 + (π/9)(x - y_i)/(x_i - a))` on `[a, x_i]`, `L[h_i] < 0`.
    SineHi,
}

impl BarrierKind {
    pub fn name(self) -> &'static str {
        match self {
            BarrierKind::SmallIntervalH => "small_interval_h",
            BarrierKind::ExpSubsolution => "exp_subsolution",
            BarrierKind::ThirdOrderM => "third_order_m",
            BarrierKind::SineHi => "sine_hi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            BarrierKind::SmallIntervalH,
            BarrierKind::ExpSubsolution,
            BarrierKind::ThirdOrderM,
            BarrierKind::SineHi,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn operator_order(self) -> usize {
        match self {
            BarrierKind::ThirdOrderM => 3,
            _ => 2,
        }
    }

    /// Sign `L[barrier]` must have: `-1` or `+1`.
    pub fn required_sign(self) -> f64 {
        match self {
            BarrierKind::SmallIntervalH | BarrierKind::SineHi => -1.0,
            BarrierKind::ExpSubsolution | BarrierKind::ThirdOrderM => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    /// Right end of the sine barrier's interval.
    pub x_i: Option<f64>,
}

impl Geometry {
    pub fn interval(a: f64, b: f64) -> Self {
        Self { a, b, x_i: None }
    }
}

#[derive(Clone, Serialize)]
pub struct CertifiedBarrier {
    pub kind: BarrierKind,
    pub c: f64,
    pub geometry: Geometry,
    pub params: BTreeMap<&'static str, f64>,
    /// Strictly positive slack of each defining inequality.
    pub slacks: BTreeMap<&'static str, f64>,
    pub expression: String,
    /// Interval on which the sign of `L[barrier]` is certified.
    pub domain: (f64, f64),
    /// Whether the right end of `domain` is included.
    pub closed_right: bool,
    #[serde(skip)]
    pub oracle: Oracle,
}

impl std::fmt::Debug for CertifiedBarrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CertifiedBarrier")
            .field("kind", &self.kind)
            .field("params", &self.params)
            .field("slacks", &self.slacks)
            .field("expression", &self.expression)
            .finish()
    }
}

impl CertifiedBarrier {
    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    /// Certificate grid on the barrier's domain.
    pub fn grid(&self, count: usize) -> Vec<f64> {
        let (lo, hi) = self.domain;
        if self.closed_right {
            closed_grid(lo, hi, count)
        } else {
            let mut g = closed_grid(lo, hi, count + 1);
            g.pop();
            g
        }
    }
}

/// Positive root of `t² - p t - q` for `p, q ≥ 0`.
fn positive_root(p: f64, q: f64) -> f64 {
    0.5 * (p + (p * p + 4.0 * q).sqrt())
}

/// Chooses parameters for `kind` and builds the barrier.
///
/// Large parameters are the positive root of the defining quadratic plus 1;
/// small ones are 0.9 times their upper bound.
pub fn make_barrier(kind: BarrierKind, c: f64, geometry: Geometry) -> Result<CertifiedBarrier> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Argument(format!("coefficient bound must be positive, got {c}")));
    }
    let Geometry { a, b, x_i } = geometry;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::Argument(format!("degenerate interval [{a}, {b}]")));
    }
    let mut params = BTreeMap::new();
    let mut slacks = BTreeMap::new();
    let (expression, domain, closed_right) = match kind {
        BarrierKind::SmallIntervalH => {
            let gamma = positive_root(c, 2.0 * c) + 1.0;
            let delta = SHRINK * 3f64.ln() / gamma;
            params.insert("gamma", gamma);
            params.insert("delta", delta);
            slacks.insert("gamma_quadratic", gamma * gamma - c * gamma - 2.0 * c);
            slacks.insert("delta_bound", 3f64.ln() / gamma - delta);
            let e = format!(
                "exp({}) - exp({}*(x - {}))",
                literal(gamma * delta),
                literal(gamma),
                literal(a)
            );
            (e, (a, a + delta), false)
        }
        BarrierKind::ExpSubsolution => {
            let lambda = positive_root(c, c) + 1.0;
            params.insert("lambda", lambda);
            slacks.insert("lambda_quadratic", lambda * lambda - c * lambda - c);
            let e = format!("exp({}*(x - {})) - 1", literal(lambda), literal(a));
            (e, (a, b), true)
        }
        BarrierKind::ThirdOrderM => {
            let len = b - a;
            let theta = positive_root(c, (1.0 + len) * c) + 1.0;
            let eta_default = SHRINK * 2.0 * LN_2 / (2.0 * theta);
            let eta_cap = (1.0 + theta * len).ln() / (2.0 * theta);
            let eta = if eta_default < eta_cap {
                eta_default
            } else {
                SHRINK * eta_cap
            };
            params.insert("theta", theta);
            params.insert("eta", eta);
            params.insert("eta_capped", if eta_default < eta_cap { 0.0 } else { 1.0 });
            slacks.insert(
                "theta_cubic",
                theta.powi(3) - c * theta * theta - (1.0 + len) * c * theta,
            );
            slacks.insert("eta_condition", theta * len - ((2.0 * theta * eta).exp() - 1.0));
            slacks.insert("eta_inside", len - eta);
            let e = format!(
                "exp({}) - exp({}*(x - {}))",
                literal(theta * eta),
                literal(-theta),
                literal(a)
            );
            (e, (a, a + eta), true)
        }
        BarrierKind::SineHi => {
            let xi = x_i.ok_or_else(|| Error::Argument("sine barrier needs x_i".into()))?;
            if !(xi > a && xi.is_finite()) {
                return Err(Error::Argument(format!("need x_i > a, got x_i = {xi}, a = {a}")));
            }
            let yi = 0.5 * (xi + a);
            let k = PI / 9.0 / (xi - a);
            let proof_bound = -k * k * (PI / 2.0 - PI / 9.0).sin() + c * k + c;
            if !(proof_bound < 0.0) {
                return Err(Error::Argument(format!(
                    "x_i - a = {} is too large for C = {c}: bound on L[h_i] is {proof_bound}",
                    xi - a
                )));
            }
            params.insert("x_i", xi);
            params.insert("y_i", yi);
            params.insert("frequency", k);
            slacks.insert("proof_bound", -proof_bound);
            let e = format!(
                "sin({} + {}*(x - {}))",
                literal(PI / 2.0),
                literal(k),
                literal(yi)
            );
            (e, (a, xi), true)
        }
    };
    let oracle = oracle::expr(&expression)?;
    Ok(CertifiedBarrier {
        kind,
        c,
        geometry,
        params,
        slacks,
        expression,
        domain,
        closed_right,
        oracle,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SignCertificate {
    pub kind: BarrierKind,
    pub required_sign: f64,
    /// `min(sign · L[barrier])` over the grid.
    pub margin: f64,
    pub worst_point: f64,
    pub grid_points: usize,
    pub grid: (f64, f64),
    pub pass: bool,
}

/// Samples `sign · L[barrier]` on `grid`; passes iff its minimum is at least
/// [`CERT_MARGIN`].
pub fn certify_sign(
    barrier: &CertifiedBarrier,
    op: &LinearOperator,
    grid: &[f64],
) -> Result<SignCertificate> {
    if op.order() != barrier.kind.operator_order() {
        return Err(Error::Argument(format!(
            "{} needs an order-{} operator, got order {}",
            barrier.kind.name(),
            barrier.kind.operator_order(),
            op.order()
        )));
    }
    if grid.is_empty() {
        return Err(Error::Argument("empty certificate grid".into()));
    }
    let sign = barrier.kind.required_sign();
    let values = grid
        .par_iter()
        .map(|&x| Ok(sign * op.apply(barrier.oracle.as_ref(), x)?))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[worst] || v.is_nan() {
            worst = i;
            if v.is_nan() {
                break;
            }
        }
    }
    let margin = values[worst];
    Ok(SignCertificate {
        kind: barrier.kind,
        required_sign: sign,
        margin,
        worst_point: grid[worst],
        grid_points: grid.len(),
        grid: (grid[0], grid[grid.len() - 1]),
        pass: margin >= CERT_MARGIN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_examples() {
        let h = make_barrier(BarrierKind::SmallIntervalH, 1.0, Geometry::interval(0.0, 1.0)).unwrap();
        assert_eq!(h.param("gamma"), 3.0);
        assert!((h.param("delta") - 0.9 * 3f64.ln() / 3.0).abs() < 1e-15);
        assert!((h.param("delta") - 0.3296).abs() < 1e-4);
        let e = make_barrier(BarrierKind::ExpSubsolution, 1.0, Geometry::interval(0.0, 1.0)).unwrap();
        assert!((e.param("lambda") - (1.0 + (1.0 + 5f64.sqrt()) / 2.0)).abs() < 1e-15);
        let m = make_barrier(BarrierKind::ThirdOrderM, 1.0, Geometry::interval(0.0, 1.0)).unwrap();
        assert_eq!(m.param("theta"), 3.0);
        assert!((m.param("eta") - 0.9 * 4f64.ln() / 6.0).abs() < 1e-15);
        assert_eq!(m.param("eta_capped"), 0.0);
        for b in [&h, &e, &m] {
            assert!(b.slacks.values().all(|s| *s > 0.0), "{b:?}");
        }
    }

    #[test]
    fn eta_cap_applies_for_small_bound() {
        let m = make_barrier(BarrierKind::ThirdOrderM, 0.5, Geometry::interval(0.0, 1.0)).unwrap();
        assert_eq!(m.param("eta_capped"), 1.0);
        assert!(m.slacks["eta_condition"] > 0.0);
    }

    #[test]
    fn degenerate_geometry() {
        assert!(make_barrier(BarrierKind::ExpSubsolution, 1.0, Geometry::interval(1.0, 1.0)).is_err());
        let g = Geometry {
            a: 0.0,
            b: 1.0,
            x_i: Some(0.0),
        };
        assert!(make_barrier(BarrierKind::SineHi, 1.0, g).is_err());
        assert!(make_barrier(BarrierKind::ExpSubsolution, 0.0, Geometry::interval(0.0, 1.0)).is_err());
    }

    #[test]
    fn small_interval_h_vanishes_at_delta() {
        let h = make_barrier(BarrierKind::SmallIntervalH, 1.0, Geometry::interval(0.0, 1.0)).unwrap();
        assert_eq!(h.oracle.value(h.param("delta")).unwrap(), 0.0);
        assert!(h.grid(512).iter().all(|&x| h.oracle.value(x).unwrap() > 0.0));
    }

    #[test]
    fn sine_barrier_range() {
        let g = Geometry {
            a: 0.0,
            b: 1.0,
            x_i: Some(0.01),
        };
        let s = make_barrier(BarrierKind::SineHi, 1.0, g).unwrap();
        let lo = (PI / 2.0 - PI / 9.0).sin();
        for x in s.grid(1024) {
            let v = s.oracle.value(x).unwrap();
            assert!(v >= lo && v <= 1.0);
        }
    }

    #[test]
    fn certificates_under_extreme_coefficients() {
        for c in [0.5, 1.0, 5.0] {
            let worst2 = LinearOperator::from_exprs(&[literal(c), literal(c)], 0.0, 1.0).unwrap();
            let h = make_barrier(BarrierKind::SmallIntervalH, c, Geometry::interval(0.0, 1.0)).unwrap();
            assert!(certify_sign(&h, &worst2, &h.grid(CERT_GRID)).unwrap().pass);
            let neg = LinearOperator::from_exprs(&[literal(-c), literal(-c)], 0.0, 1.0).unwrap();
            let e = make_barrier(BarrierKind::ExpSubsolution, c, Geometry::interval(0.0, 1.0)).unwrap();
            let cert = certify_sign(&e, &neg, &e.grid(CERT_GRID)).unwrap();
            assert!(cert.pass, "{cert:?}");
            let m3 = LinearOperator::from_exprs(&[literal(-c), literal(-c), literal(c)], 0.0, 1.0).unwrap();
            let m = make_barrier(BarrierKind::ThirdOrderM, c, Geometry::interval(0.0, 1.0)).unwrap();
            assert!(certify_sign(&m, &m3, &m.grid(CERT_GRID)).unwrap().pass);
            assert!(matches!(
                certify_sign(&m, &worst2, &m.grid(16)),
                Err(Error::Argument(_))
            ));
        }
    }
}
