//! Function oracles: anything that can produce a [`Jet`] at a point.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{self, Expr, Program, Var};
use crate::jet::{Jet, MAX_ORDER};

/// How an oracle computes its derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backing {
    /// Parsed expression; exact jets to [`MAX_ORDER`].
    Expression,
    /// Numerically integrated trajectory; jets limited to the ODE order.
    Trajectory,
    /// Hand-coded closed form or a composite of other oracles.
    Closed,
}

pub trait FunctionOracle: Send + Sync {
    fn jet(&self, x: f64, order: usize) -> Result<Jet>;

    fn value(&self, x: f64) -> Result<f64> {
        Ok(self.jet(x, 0)?.value())
    }

    fn max_order(&self) -> usize {
        MAX_ORDER
    }

    fn backing(&self) -> Backing {
        Backing::Closed
    }

    fn describe(&self) -> String {
        "<function>".into()
    }
}

pub type Oracle = Arc<dyn FunctionOracle>;

impl fmt::Debug for dyn FunctionOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// An expression in `x`.
#[derive(Debug, Clone)]
pub struct ExprOracle {
    source: String,
    ast: Expr,
    program: Program,
}

impl ExprOracle {
    pub fn parse(source: &str) -> Result<Self> {
        let ast = expr::parse(source)?;
        if let Some(v) = ast.variables().into_iter().find(|v| *v != Var::X) {
            return Err(Error::Argument(format!(
                "`{source}` uses `{v}`; only `x` is allowed here"
            )));
        }
        Ok(Self {
            source: source.to_string(),
            program: Program::compile(&ast),
            ast,
        })
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl FunctionOracle for ExprOracle {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        Ok(self.program.eval_jet(&Jet::variable(x, order), &[], order)?)
    }

    fn value(&self, x: f64) -> Result<f64> {
        Ok(self.program.eval(x, &[])?)
    }

    fn backing(&self) -> Backing {
        Backing::Expression
    }

    fn describe(&self) -> String {
        self.source.clone()
    }
}

pub fn expr(source: &str) -> Result<Oracle> {
    Ok(Arc::new(ExprOracle::parse(source)?))
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl FunctionOracle for Constant {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        Ok(Jet::constant(x, self.0, order))
    }

    fn value(&self, _x: f64) -> Result<f64> {
        Ok(self.0)
    }

    fn backing(&self) -> Backing {
        Backing::Expression
    }

    fn describe(&self) -> String {
        format!("{}", self.0)
    }
}

pub fn constant(v: f64) -> Oracle {
    Arc::new(Constant(v))
}

type JetFn = dyn Fn(f64, usize) -> Result<Jet> + Send + Sync;

/// Oracle backed by a closure.
pub struct FnOracle {
    f: Box<JetFn>,
    max_order: usize,
    label: String,
}

impl FnOracle {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64, usize) -> Result<Jet> + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Box::new(f),
            max_order: MAX_ORDER,
            label: label.into(),
        }
    }

    pub fn with_max_order(mut self, max_order: usize) -> Self {
        self.max_order = max_order;
        self
    }

    pub fn into_oracle(self) -> Oracle {
        Arc::new(self)
    }
}

impl FunctionOracle for FnOracle {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        if order > self.max_order {
            return Err(Error::Capability(format!(
                "{} provides derivatives up to order {}, {order} requested",
                self.label, self.max_order
            )));
        }
        (self.f)(x, order)
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// `x ↦ sign · inner(2·pivot − x)`.
pub struct Reflected {
    inner: Oracle,
    pivot: f64,
    sign: f64,
}

impl Reflected {
    pub fn new(inner: Oracle, pivot: f64, sign: f64) -> Self {
        Self { inner, pivot, sign }
    }

    pub fn oracle(inner: Oracle, pivot: f64, sign: f64) -> Oracle {
        Arc::new(Self::new(inner, pivot, sign))
    }
}

impl FunctionOracle for Reflected {
    fn value(&self, x: f64) -> Result<f64> {
        Ok(self.sign * self.inner.value(2.0 * self.pivot - x)?)
    }

    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        let src = self.inner.jet(2.0 * self.pivot - x, order)?;
        let mut d = src.derivs().to_vec();
        let mut s = self.sign;
        for v in d.iter_mut() {
            *v *= s;
            s = -s;
        }
        Ok(Jet::new(x, &d)?)
    }

    fn max_order(&self) -> usize {
        self.inner.max_order()
    }

    fn backing(&self) -> Backing {
        self.inner.backing()
    }

    fn describe(&self) -> String {
        let s = if self.sign < 0.0 { "-" } else { "" };
        format!("{s}[{}](2*{} - x)", self.inner.describe(), self.pivot)
    }
}

/// `α·u + β·w`.
pub fn linear_combination(alpha: f64, u: Oracle, beta: f64, w: Oracle) -> Oracle {
    let label = format!("{alpha}*[{}] + {beta}*[{}]", u.describe(), w.describe());
    let max = u.max_order().min(w.max_order());
    FnOracle::new(label, move |x, m| {
        Ok(u.jet(x, m)?.scale(alpha)?.add(&w.jet(x, m)?.scale(beta)?)?)
    })
    .with_max_order(max)
    .into_oracle()
}

pub fn negated(u: Oracle) -> Oracle {
    let label = format!("-[{}]", u.describe());
    let max = u.max_order();
    FnOracle::new(label, move |x, m| Ok(u.jet(x, m)?.neg()))
        .with_max_order(max)
        .into_oracle()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_oracle_rejects_z() {
        assert!(matches!(ExprOracle::parse("z1 + x"), Err(Error::Argument(_))));
        let u = expr("sin(x)").unwrap();
        assert_eq!(u.jet(0.0, 2).unwrap().derivs(), &[0.0, 1.0, 0.0]);
        assert_eq!(u.backing(), Backing::Expression);
    }

    #[test]
    fn reflection_signs() {
        // u = x^3 reflected about 1 with sign -1: -(2 - x)^3
        let u = expr("x^3").unwrap();
        let r = Reflected::new(u, 1.0, -1.0);
        let j = r.jet(0.5, 3).unwrap();
        // -(1.5)^3, 3(1.5)^2, -6(1.5), 6
        assert_eq!(j.derivs(), &[-3.375, 6.75, -9.0, 6.0]);
        assert_eq!(j.point(), 0.5);
    }

    #[test]
    fn closure_capability_limit() {
        let f = FnOracle::new("cap", |x, m| Ok(Jet::zero(x, m))).with_max_order(2);
        assert!(f.jet(0.0, 2).is_ok());
        assert!(matches!(f.jet(0.0, 3), Err(Error::Capability(_))));
    }
}
