//! Truncated derivative sequences (Taylor-mode differentiation).
//!
//! A [`Jet`] stores the value of a function and its derivatives up to a fixed
//! order at one point. Derivative values are stored directly (not Taylor
//! coefficients), so `derivs()[k]` is the k-th derivative. All arithmetic is
//! exact in the sense of automatic differentiation: the only error is
//! floating-point rounding.

use serde::{Serialize, Serializer};
use thiserror::Error;

/// Highest derivative order a jet can carry.
pub const MAX_ORDER: usize = 12;

const SLOTS: usize = MAX_ORDER + 1;

const fn binomial_table() -> [[f64; SLOTS]; SLOTS] {
    let mut t = [[0.0; SLOTS]; SLOTS];
    let mut n = 0;
    while n < SLOTS {
        t[n][0] = 1.0;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0.0 };
            k += 1;
        }
        n += 1;
    }
    t
}

static BINOM: [[f64; SLOTS]; SLOTS] = binomial_table();

/// Binomial coefficient C(n, k) for n, k ≤ [`MAX_ORDER`].
#[inline]
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        0.0
    } else {
        BINOM[n][k]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("jet operands disagree: ({lhs_point}, order {lhs_order}) vs ({rhs_point}, order {rhs_order})")]
    Mismatch {
        lhs_point: f64,
        lhs_order: usize,
        rhs_point: f64,
        rhs_order: usize,
    },
    #[error("a jet needs at least a value slot")]
    Empty,
    #[error("order {0} exceeds the supported maximum of {MAX_ORDER}")]
    OrderTooHigh(usize),
    #[error("division by a jet with zero value at x = {0}")]
    Singular(f64),
    #[error("{func} is not differentiable at x = {point} (argument value 0)")]
    NonDifferentiable { func: &'static str, point: f64 },
    #[error("{func} undefined for argument {value} at x = {point}")]
    Domain {
        func: &'static str,
        value: f64,
        point: f64,
    },
    #[error("non-finite derivative of order {order} at x = {point}")]
    NonFinite { order: usize, point: f64 },
}

/// Binary arithmetic selector for [`jet_arith`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Scale,
    Div,
}

/// Right-hand operand of [`jet_arith`].
#[derive(Debug, Clone, Copy)]
pub enum Operand {
    Jet(Jet),
    Scalar(f64),
}

/// Elementary function selector for [`jet_elementary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementary {
    Exp,
    Sin,
    Cos,
    Log,
    PowConst,
    Abs,
}

/// Value and derivatives of a function at a point.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet {
    point: f64,
    order: usize,
    d: [f64; SLOTS],
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("point", &self.point)
            .field("derivs", &self.derivs())
            .finish()
    }
}

impl Serialize for Jet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.derivs().serialize(s)
    }
}

impl Jet {
    /// Builds a jet from explicit derivative values; `derivs.len() - 1` is the order.
    pub fn new(point: f64, derivs: &[f64]) -> Result<Self, JetError> {
        if derivs.is_empty() {
            return Err(JetError::Empty);
        }
        let order = derivs.len() - 1;
        if order > MAX_ORDER {
            return Err(JetError::OrderTooHigh(order));
        }
        let mut d = [0.0; SLOTS];
        d[..derivs.len()].copy_from_slice(derivs);
        Self { point, order, d }.checked()
    }

    pub fn constant(point: f64, value: f64, order: usize) -> Self {
        let mut d = [0.0; SLOTS];
        d[0] = value;
        Self {
            point,
            order: order.min(MAX_ORDER),
            d,
        }
    }

    /// The identity function `x ↦ x` at `point`.
    pub fn variable(point: f64, order: usize) -> Self {
        let mut j = Self::constant(point, point, order);
        if j.order >= 1 {
            j.d[1] = 1.0;
        }
        j
    }

    /// A jet with all slots zero except the first derivative set to `dot`
    /// (a first-order dual number seeded along one direction).
    pub fn dual(point: f64, value: f64, dot: f64) -> Self {
        let mut j = Self::constant(point, value, 1);
        j.d[1] = dot;
        j
    }

    pub fn zero(point: f64, order: usize) -> Self {
        Self::constant(point, 0.0, order)
    }

    pub fn point(&self) -> f64 {
        self.point
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.d[0]
    }

    pub fn derivs(&self) -> &[f64] {
        &self.d[..=self.order]
    }

    /// k-th derivative. Panics past `order`.
    pub fn deriv(&self, k: usize) -> f64 {
        assert!(k <= self.order, "derivative {k} beyond jet order {}", self.order);
        self.d[k]
    }

    pub fn with_point(mut self, point: f64) -> Self {
        self.point = point;
        self
    }

    /// Drops derivatives above `order`.
    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        let mut d = [0.0; SLOTS];
        d[..=order].copy_from_slice(&self.d[..=order]);
        Self {
            point: self.point,
            order,
            d,
        }
    }

    /// Jet of the derivative: shifts slots down by one, lowering the order.
    pub fn derivative(&self) -> Result<Self, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderTooHigh(1));
        }
        let mut d = [0.0; SLOTS];
        d[..self.order].copy_from_slice(&self.d[1..=self.order]);
        Ok(Self {
            point: self.point,
            order: self.order - 1,
            d,
        })
    }

    /// Coefficients of the Taylor polynomial, `derivs[k] / k!`.
    pub fn taylor_coefficients(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.derivs()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if k > 0 {
                    fact *= k as f64;
                }
                v / fact
            })
            .collect()
    }

    fn checked(self) -> Result<Self, JetError> {
        for (k, v) in self.derivs().iter().enumerate() {
            if !v.is_finite() {
                return Err(JetError::NonFinite {
                    order: k,
                    point: self.point,
                });
            }
        }
        Ok(self)
    }

    fn compatible(&self, rhs: &Jet) -> Result<(), JetError> {
        if self.order != rhs.order || self.point != rhs.point {
            return Err(JetError::Mismatch {
                lhs_point: self.point,
                lhs_order: self.order,
                rhs_point: rhs.point,
                rhs_order: rhs.order,
            });
        }
        Ok(())
    }

    fn blank(&self) -> Self {
        Self::zero(self.point, self.order)
    }

    pub fn add(&self, rhs: &Jet) -> Result<Self, JetError> {
        self.compatible(rhs)?;
        let mut out = self.blank();
        for k in 0..=self.order {
            out.d[k] = self.d[k] + rhs.d[k];
        }
        out.checked()
    }

    pub fn sub(&self, rhs: &Jet) -> Result<Self, JetError> {
        self.compatible(rhs)?;
        let mut out = self.blank();
        for k in 0..=self.order {
            out.d[k] = self.d[k] - rhs.d[k];
        }
        out.checked()
    }

    /// Leibniz rule: (fg)^(k) = Σ_j C(k,j) f^(j) g^(k-j).
    pub fn mul(&self, rhs: &Jet) -> Result<Self, JetError> {
        self.compatible(rhs)?;
        let mut out = self.blank();
        for k in 0..=self.order {
            let mut acc = self.d[0] * rhs.d[k];
            for j in 1..=k {
                acc += BINOM[k][j] * self.d[j] * rhs.d[k - j];
            }
            out.d[k] = acc;
        }
        out.checked()
    }

    pub fn scale(&self, s: f64) -> Result<Self, JetError> {
        let mut out = self.blank();
        for k in 0..=self.order {
            out.d[k] = s * self.d[k];
        }
        out.checked()
    }

    pub fn add_scalar(&self, s: f64) -> Result<Self, JetError> {
        let mut out = *self;
        out.d[0] += s;
        out.checked()
    }

    pub fn neg(&self) -> Self {
        let mut out = *self;
        for v in out.d[..=self.order].iter_mut() {
            *v = -*v;
        }
        out
    }

    /// Quotient from f = q·g differentiated k times.
    pub fn div(&self, rhs: &Jet) -> Result<Self, JetError> {
        self.compatible(rhs)?;
        let g0 = rhs.d[0];
        if g0 == 0.0 {
            return Err(JetError::Singular(self.point));
        }
        let mut out = self.blank();
        out.d[0] = self.d[0] / g0;
        for k in 1..=self.order {
            let mut acc = self.d[k];
            for j in 1..=k {
                acc -= BINOM[k][j] * rhs.d[j] * out.d[k - j];
            }
            out.d[k] = acc / g0;
        }
        out.checked()
    }

    pub fn exp(&self) -> Result<Self, JetError> {
        let mut out = self.blank();
        out.d[0] = self.d[0].exp();
        // e' = f' e
        for k in 1..=self.order {
            let mut acc = 0.0;
            for j in 0..k {
                acc += BINOM[k - 1][j] * self.d[j + 1] * out.d[k - 1 - j];
            }
            out.d[k] = acc;
        }
        out.checked()
    }

    /// Returns (sin f, cos f) computed together from s' = c f', c' = -s f'.
    pub fn sin_cos(&self) -> Result<(Self, Self), JetError> {
        let mut s = self.blank();
        let mut c = self.blank();
        s.d[0] = self.d[0].sin();
        c.d[0] = std::hint::black_box(self.d[0]).cos();
        for k in 1..=self.order {
            let mut sa = 0.0;
            let mut ca = 0.0;
            for j in 0..k {
                let w = BINOM[k - 1][j] * self.d[j + 1];
                sa += w * c.d[k - 1 - j];
                ca -= w * s.d[k - 1 - j];
            }
            s.d[k] = sa;
            c.d[k] = ca;
        }
        Ok((s.checked()?, c.checked()?))
    }

    pub fn sin(&self) -> Result<Self, JetError> {
        Ok(self.sin_cos()?.0)
    }

    pub fn cos(&self) -> Result<Self, JetError> {
        Ok(self.sin_cos()?.1)
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let f0 = self.d[0];
        if f0 <= 0.0 {
            return Err(JetError::Domain {
                func: "log",
                value: f0,
                point: self.point,
            });
        }
        let mut out = self.blank();
        out.d[0] = f0.ln();
        // f l' = f'
        for k in 1..=self.order {
            let mut acc = self.d[k];
            for j in 1..k {
                acc -= BINOM[k - 1][j] * self.d[j] * out.d[k - j];
            }
            out.d[k] = acc / f0;
        }
        out.checked()
    }

    pub fn abs(&self) -> Result<Self, JetError> {
        let f0 = self.d[0];
        if f0 > 0.0 {
            Ok(*self)
        } else if f0 < 0.0 {
            Ok(self.neg())
        } else if self.order == 0 {
            Ok(Self::zero(self.point, 0))
        } else {
            Err(JetError::NonDifferentiable {
                func: "abs",
                point: self.point,
            })
        }
    }

    /// f^r for a constant real exponent `r`.
    ///
    /// Integer exponents accept any base (zero base only for r ≥ 0); other
    /// exponents need a positive base, or a zero base at order 0.
    pub fn powf(&self, r: f64) -> Result<Self, JetError> {
        let f0 = self.d[0];
        let integer = r.fract() == 0.0 && r.abs() <= i32::MAX as f64;
        if !integer && f0 < 0.0 {
            return Err(JetError::Domain {
                func: "pow",
                value: f0,
                point: self.point,
            });
        }
        if f0 == 0.0 {
            if r < 0.0 {
                return Err(JetError::Singular(self.point));
            }
            if r == 0.0 {
                return Ok(Self::constant(self.point, 1.0, self.order));
            }
            if integer {
                let mut out = Self::constant(self.point, 1.0, self.order);
                for _ in 0..(r as u32) {
                    out = out.mul(self)?;
                }
                out.d[0] = f0.powf(r);
                return out.checked();
            }
            if self.order == 0 {
                return Ok(Self::constant(self.point, f0.powf(r), 0));
            }
            return Err(JetError::NonDifferentiable {
                func: "pow",
                point: self.point,
            });
        }
        if integer && r.abs() <= 16.0 {
            let mut out = Self::constant(self.point, 1.0, self.order);
            for _ in 0..(r.abs() as u32) {
                out = out.mul(self)?;
            }
            if r < 0.0 {
                out = Self::constant(self.point, 1.0, self.order).div(&out)?;
            }
            out.d[0] = f0.powf(r);
            return out.checked();
        }
        let mut out = self.blank();
        out.d[0] = f0.powf(r);
        // f p' = r f' p, differentiated k-1 times
        for k in 1..=self.order {
            let mut acc = 0.0;
            for j in 0..k {
                acc += r * BINOM[k - 1][j] * self.d[j + 1] * out.d[k - 1 - j];
            }
            for j in 1..k {
                acc -= BINOM[k - 1][j] * self.d[j] * out.d[k - j];
            }
            out.d[k] = acc / f0;
        }
        out.checked()
    }

    /// f^g for a jet exponent. Falls back to [`Jet::powf`] when `g` is constant.
    pub fn pow(&self, g: &Jet) -> Result<Self, JetError> {
        self.compatible(g)?;
        if g.derivs()[1..].iter().all(|v| *v == 0.0) {
            return self.powf(g.d[0]);
        }
        self.ln()?.mul(g)?.exp()
    }
}

/// Binary jet arithmetic: `add`, `sub`, `mul` and `div` take a jet or a scalar
/// (promoted to a constant jet); `scale` takes a scalar.
pub fn jet_arith(op: ArithOp, lhs: &Jet, rhs: Operand) -> Result<Jet, JetError> {
    let rhs_jet = |r: Operand| match r {
        Operand::Jet(j) => j,
        Operand::Scalar(s) => Jet::constant(lhs.point, s, lhs.order),
    };
    match op {
        ArithOp::Add => lhs.add(&rhs_jet(rhs)),
        ArithOp::Sub => lhs.sub(&rhs_jet(rhs)),
        ArithOp::Mul => lhs.mul(&rhs_jet(rhs)),
        ArithOp::Div => lhs.div(&rhs_jet(rhs)),
        ArithOp::Scale => match rhs {
            Operand::Scalar(s) => lhs.scale(s),
            Operand::Jet(j) => lhs.mul(&j),
        },
    }
}

/// Elementary function of a jet. `param` is the exponent for `PowConst`.
pub fn jet_elementary(func: Elementary, arg: &Jet, param: Option<f64>) -> Result<Jet, JetError> {
    match func {
        Elementary::Exp => arg.exp(),
        Elementary::Sin => arg.sin(),
        Elementary::Cos => arg.cos(),
        Elementary::Log => arg.ln(),
        Elementary::Abs => arg.abs(),
        Elementary::PowConst => arg.powf(param.unwrap_or(1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(point: f64, d: &[f64]) -> Jet {
        Jet::new(point, d).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(12, 6), 924.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn square_of_identity() {
        let x = j(2.0, &[2.0, 1.0, 0.0]);
        assert_eq!(x.mul(&x).unwrap().derivs(), &[4.0, 4.0, 2.0]);
    }

    #[test]
    fn add_example() {
        let a = j(0.0, &[0.0, 1.0, 0.0, -1.0]);
        let b = j(0.0, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.add(&b).unwrap().derivs(), &[1.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn quotient_example() {
        // (1+x)/(1-x) at 0: value 1, slope 2
        let q = jet_arith(
            ArithOp::Div,
            &j(0.0, &[1.0, 1.0]),
            Operand::Jet(j(0.0, &[1.0, -1.0])),
        )
        .unwrap();
        assert_eq!(q.derivs(), &[1.0, 2.0]);
    }

    #[test]
    fn exp_of_linear() {
        let e = jet_elementary(Elementary::Exp, &j(0.0, &[0.0, 2.0, 0.0]), None).unwrap();
        assert_eq!(e.derivs(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn sin_of_identity() {
        let s = jet_elementary(Elementary::Sin, &Jet::variable(0.0, 3), None).unwrap();
        assert_eq!(s.derivs(), &[0.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn abs_at_zero() {
        let err = jet_elementary(Elementary::Abs, &j(0.0, &[0.0, 1.0]), None).unwrap_err();
        assert!(matches!(err, JetError::NonDifferentiable { .. }));
        assert_eq!(Jet::zero(0.0, 0).abs().unwrap().value(), 0.0);
    }

    #[test]
    fn log_domain() {
        assert!(matches!(
            Jet::constant(1.0, -1.0, 2).ln(),
            Err(JetError::Domain { .. })
        ));
        let l = Jet::variable(1.0, 3).ln().unwrap();
        assert_eq!(l.derivs(), &[0.0, 1.0, -1.0, 2.0]);
    }

    #[test]
    fn mismatch_and_singular() {
        let a = Jet::variable(0.0, 2);
        let b = Jet::variable(1.0, 2);
        assert!(matches!(a.add(&b), Err(JetError::Mismatch { .. })));
        assert!(matches!(
            a.add(&Jet::variable(0.0, 3)),
            Err(JetError::Mismatch { .. })
        ));
        assert!(matches!(
            Jet::variable(1.0, 2).div(&Jet::zero(1.0, 2)),
            Err(JetError::Singular(_))
        ));
    }

    #[test]
    fn powers() {
        // x^3 at 0 through order 4: 0, 0, 0, 6, 0
        let p = Jet::variable(0.0, 4).powf(3.0).unwrap();
        assert_eq!(p.derivs(), &[0.0, 0.0, 0.0, 6.0, 0.0]);
        // x^0.5 at 4: 2, 1/4, -1/32
        let r = Jet::variable(4.0, 2).powf(0.5).unwrap();
        assert!((r.deriv(1) - 0.25).abs() < 1e-15);
        assert!((r.deriv(2) + 1.0 / 32.0).abs() < 1e-15);
        assert!(matches!(
            Jet::variable(0.0, 1).powf(0.5),
            Err(JetError::NonDifferentiable { .. })
        ));
        assert!(matches!(
            Jet::constant(0.0, -2.0, 1).powf(0.5),
            Err(JetError::Domain { .. })
        ));
        // integer exponent of a negative base is fine: (-x)^2 at x=1
        let n = Jet::variable(1.0, 2).neg().powf(2.0).unwrap();
        assert_eq!(n.derivs(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn derivative_shift_and_truncate() {
        let a = j(0.5, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.derivative().unwrap().derivs(), &[2.0, 3.0, 4.0]);
        assert_eq!(a.truncate(1).derivs(), &[1.0, 2.0]);
        assert_eq!(a.taylor_coefficients(), vec![1.0, 2.0, 1.5, 4.0 / 6.0]);
    }

    #[test]
    fn order_limit() {
        assert!(matches!(
            Jet::new(0.0, &[0.0; 14]),
            Err(JetError::OrderTooHigh(13))
        ));
    }
}
