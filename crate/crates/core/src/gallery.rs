//! Built-in examples and counterexamples, each with the verdict its checker
//! must reproduce.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::{Jet, JetError};
use crate::oracle::{Backing, FunctionOracle, Oracle};
use crate::problem::{BvpSpec, IvpSpec, Kind, ProblemFile, Source};
use crate::verdict::Status;

/// `[(β+1)(β+2)...(β+n)]^{1/(α-1)}` with `β = nα/(1-α)`.
pub fn lambda_n(n: usize, alpha: f64) -> f64 {
    let beta = sharp_beta(n, alpha);
    let prod: f64 = (1..=n).map(|j| beta + j as f64).product();
    prod.powf(1.0 / (alpha - 1.0))
}

/// `(n!/(2n)!)²`, the α = 1/2 value of [`lambda_n`].
pub fn lambda_half(n: usize) -> f64 {
    let ratio: f64 = (n + 1..=2 * n).map(|j| 1.0 / j as f64).product();
    ratio * ratio
}

pub fn sharp_beta(n: usize, alpha: f64) -> f64 {
    n as f64 * alpha / (1.0 - alpha)
}

/// `u(x) = -λ x^p` for `x ≥ 0` and `(-1)^{n-1} λ (-x)^p` for `x < 0`, with
/// `p = n/(1-α)`; solves `u^(n) = -|u|^α` away from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpExample {
    pub n: usize,
    pub alpha: f64,
    pub p: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl SharpExample {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n < 2 || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Argument(format!(
                "sharp example needs n >= 2 and 0 < alpha < 1, got n = {n}, alpha = {alpha}"
            )));
        }
        Ok(Self {
            n,
            alpha,
            p: n as f64 / (1.0 - alpha),
            beta: sharp_beta(n, alpha),
            lambda: lambda_n(n, alpha),
        })
    }

    pub fn oracle(&self) -> Oracle {
        Arc::new(*self)
    }

    /// `|u^(n)(x) + |u(x)|^α| / |u^(n)(x)|`.
    pub fn identity_residual(&self, x: f64) -> Result<f64> {
        let j = self.jet(x, self.n)?;
        let top = j.deriv(self.n);
        let rhs = -j.value().abs().powf(self.alpha);
        Ok((top - rhs).abs() / top.abs().max(f64::MIN_POSITIVE))
    }

    /// `count` points in each of `(-1, -0.05]` and `[0.05, 1)`.
    pub fn sample_points(count: usize) -> Vec<f64> {
        let mut pts = Vec::with_capacity(2 * count);
        for i in 0..count {
            let t = i as f64 / count as f64;
            pts.push(-0.05 - 0.95 * t);
            pts.push(0.05 + 0.95 * t);
        }
        pts
    }
}

fn falling(p: f64, k: usize) -> f64 {
    (0..k).map(|j| p - j as f64).product()
}

impl FunctionOracle for SharpExample {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        let sign = if self.n % 2 == 1 { 1.0 } else { -1.0 };
        let mut d = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let c = falling(self.p, k);
            let v = if x > 0.0 {
                -self.lambda * c * x.powf(self.p - k as f64)
            } else if x < 0.0 {
                let s = if k % 2 == 0 { sign } else { -sign };
                s * self.lambda * c * (-x).powf(self.p - k as f64)
            } else if (k as f64) < self.p || c == 0.0 {
                0.0
            } else {
                return Err(JetError::NonDifferentiable {
                    func: "sharp example",
                    point: 0.0,
                }
                .into());
            };
            d.push(v);
        }
        Ok(Jet::new(x, &d)?)
    }

    fn backing(&self) -> Backing {
        Backing::Closed
    }

    fn describe(&self) -> String {
        format!("sharp example (n = {}, alpha = {})", self.n, self.alpha)
    }
}

/// `(x - 1/i)² - 1/i²`: vanishes at 0 and 2/i, minimum `-1/i²` at `1/i`.
pub fn g_i_source(i: u32) -> String {
    format!("(x - 1/{i})^2 - 1/{i}^2")
}

#[derive(Debug, Clone, Serialize)]
pub struct GalleryCase {
    pub id: String,
    pub title: &'static str,
    pub expected: Status,
    pub problem: ProblemFile,
}

fn case(id: &str, title: &'static str, expected: Status, problem: ProblemFile) -> GalleryCase {
    GalleryCase {
        id: id.to_string(),
        title,
        expected,
        problem,
    }
}

fn expr_src(s: &str) -> Source {
    Source::Expr(s.to_string())
}

/// The registry, in a fixed order.
pub fn cases() -> Vec<GalleryCase> {
    use Status::*;
    let mut out = vec![
        case(
            "parabola-left",
            "u = x - x^2 under u'' at the left endpoint",
            Holds,
            ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(expr_src("x - x^2")),
        ),
        case(
            "parabola-right",
            "u = x(1 - x) under u'' at the right endpoint",
            Holds,
            ProblemFile::new(Kind::HopfRight, 2, (0.0, 1.0)).with_u(expr_src("x*(1 - x)")),
        ),
        case(
            "quartic-left",
            "u = x^2 - x^4 under u''' at the left endpoint",
            Holds,
            ProblemFile::new(Kind::HopfLeft, 3, (0.0, 1.0)).with_u(expr_src("x^2 - x^4")),
        ),
        case(
            "quartic-right",
            "u = -(1 - x)^2 + (1 - x)^4 under u''' at the right endpoint",
            Holds,
            ProblemFile::new(Kind::HopfRight, 3, (0.0, 1.0)).with_u(expr_src("-(1 - x)^2 + (1 - x)^4")),
        ),
        case(
            "ivp-left-n4",
            "forward-constructed IVP with slope 1/2 and forcing 1 + x, n = 4",
            Holds,
            ProblemFile::new(Kind::HopfLeft, 4, (0.0, 1.0))
                .with_coefficients(&["sin(x)", "0.5", "-x", "cos(x)"])
                .with_u(Source::Ivp(IvpSpec::left(vec![0.0, 0.0, 0.0, 0.5], Some("1 + x")))),
        ),
    ];
    for (n, alpha, tag) in [(3, 0.5, "3-half"), (4, 0.5, "4-half"), (3, 1.0 / 3.0, "3-third")] {
        let sharp = Source::Sharp { n, alpha };
        out.push(GalleryCase {
            id: format!("sharp-{tag}-left"),
            title: "sharp example at the left endpoint: sequence condition fails",
            expected: HypothesesUnmet,
            problem: ProblemFile::new(Kind::HopfLeft, n, (0.0, 1.0)).with_u(sharp.clone()),
        });
        out.push(GalleryCase {
            id: format!("sharp-{tag}-right"),
            title: "sharp example at the right endpoint of [-1, 0]: sequence condition fails",
            expected: HypothesesUnmet,
            problem: ProblemFile::new(Kind::HopfRight, n, (-1.0, 0.0)).with_u(sharp),
        });
    }
    out.push(case(
        "sharp-dichotomy",
        "u''' = -|u|^(1/2) at b = 0: neither branch holds without a Lipschitz rhs",
        Fails,
        ProblemFile::new(Kind::Boundary, 3, (-1.0, 0.0))
            .with_u(Source::Sharp { n: 3, alpha: 0.5 })
            .with_rhs("-abs(z1)^0.5")
            .with_endpoint("right"),
    ));
    for i in [2u32, 8, 32] {
        out.push(GalleryCase {
            id: format!("g-{i}"),
            title: "g_i = (x - 1/i)^2 - 1/i^2 under u''': no small-interval maximum principle at order 3",
            expected: NotApplicable,
            problem: ProblemFile::new(Kind::MaxPrinciple, 3, (0.0, 2.0 / i as f64)).with_u(Source::Expr(g_i_source(i))),
        });
    }
    out.extend([
        case(
            "sin-x",
            "u = sin x is annihilated by u''' + u' yet negative on (pi, 2 pi)",
            NotApplicable,
            ProblemFile::new(Kind::MaxPrinciple, 3, (0.0, 2.0 * PI))
                .with_coefficients(&["0", "1", "0"])
                .with_u(expr_src("sin(x)")),
        ),
        case(
            "lemma-parabola",
            "g'' = -1 with zero boundary values on an interval shorter than delta(1)",
            Holds,
            ProblemFile::new(Kind::MaxPrinciple, 2, (0.0, 0.3))
                .with_bound(1.0)
                .with_u(Source::Bvp(BvpSpec {
                    left: 0.0,
                    right: 0.0,
                    forcing: Some("1".into()),
                })),
        ),
        case(
            "third-order-quartic",
            "u = x^2 - x^4 with bounded coefficients and u >= 0 near 0",
            Holds,
            ProblemFile::new(Kind::ThirdOrderBounded, 3, (0.0, 1.0))
                .with_u(expr_src("x^2 - x^4"))
                .with_nonneg_radius(0.5),
        ),
        case(
            "dichotomy-branch-2",
            "u'' = 1, u = x^2/2: u'(0) = 0 and u''(0) = 1",
            Holds,
            ProblemFile::new(Kind::Boundary, 2, (0.0, 1.0)).with_u(expr_src("x^2/2")).with_rhs("1"),
        ),
        case(
            "dichotomy-branch-1",
            "u'' = -1, u = x - x^2/2: u'(0) = 1",
            Holds,
            ProblemFile::new(Kind::Boundary, 2, (0.0, 1.0)).with_u(expr_src("x - x^2/2")).with_rhs("-1"),
        ),
        case(
            "equivalent-cubic-left",
            "u''' = -6 with zero data gives u = -x^3 <= 0 near 0",
            Holds,
            ProblemFile::new(Kind::Equivalent, 3, (0.0, 1.0))
                .with_u(Source::Ivp(IvpSpec::left(vec![0.0; 3], Some("6")))),
        ),
        case(
            "equivalent-cubic-right",
            "u = (1 - x)^3 has a full zero jet at 1 and u >= 0 to its left",
            Holds,
            ProblemFile::new(Kind::Equivalent, 3, (0.0, 1.0))
                .with_u(expr_src("(1 - x)^3"))
                .with_endpoint("right"),
        ),
        case(
            "compare-2",
            "K = z4, u = 0, v = x^2 touching at 0: u <= v on both sides",
            Holds,
            ProblemFile::new(Kind::Compare, 2, (-1.0, 1.0))
                .with_k("z4")
                .with_u(expr_src("0"))
                .with_v(expr_src("x^2"))
                .with_contact(0.0, 0.5),
        ),
        case(
            "compare-3",
            "K = z5, u = 0, v = x^3 touching at 0: u >= v left, u <= v right",
            Holds,
            ProblemFile::new(Kind::Compare, 3, (-1.0, 1.0))
                .with_k("z5")
                .with_u(expr_src("0"))
                .with_v(expr_src("x^3"))
                .with_contact(0.0, 0.5),
        ),
        case(
            "uniqueness",
            "zero data stays zero; a small top-order kick does not",
            Holds,
            ProblemFile::new(Kind::Uniqueness, 2, (0.0, 1.0)).with_coefficients(&["sin(x)", "1 + x"]),
        ),
        case(
            "continuation-quartic",
            "u = x^2 - x^4: first non-vanishing derivative at 0 has order 2",
            Holds,
            ProblemFile::new(Kind::Uniqueness, 3, (0.0, 1.0))
                .with_u(expr_src("x^2 - x^4"))
                .with_max_order(8),
        ),
        case(
            "reduce-zero-3",
            "reduction of u''' with f = (1 - x)/(1 - x + x^2/2)",
            Holds,
            ProblemFile::new(Kind::Reduce, 3, (0.0, 0.9)),
        ),
        case(
            "barrier-h",
            "small-interval barrier h for C = 1",
            Holds,
            ProblemFile::new(Kind::Barrier, 2, (0.0, 1.0))
                .with_coefficients(&["sin(x)", "cos(x)"])
                .with_barrier("small_interval_h", Some(1.0), None),
        ),
    ]);
    out
}

pub fn find(id: &str) -> Option<GalleryCase> {
    cases().into_iter().find(|c| c.id == id)
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub id: String,
    pub expected: Status,
    pub status: Status,
    pub matched: bool,
}

/// Runs one case with default options.
pub fn run_case(c: &GalleryCase) -> Result<(CaseOutcome, crate::verdict::VerdictReport)> {
    let out = crate::problem::execute(&c.problem)?;
    let status = out.report.status;
    Ok((
        CaseOutcome {
            id: c.id.clone(),
            expected: c.expected,
            status,
            matched: status == c.expected,
        },
        out.report,
    ))
}

/// Runs every case concurrently; results come back in registry order.
pub fn run_all() -> Vec<Result<CaseOutcome>> {
    cases()
        .par_iter()
        .map(|c| run_case(c).map(|(o, _)| o))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_three_half() {
        let l = lambda_n(3, 0.5);
        assert!((l - 1.0 / 14400.0).abs() <= 1e-14 * l);
        assert!((l - lambda_half(3)).abs() <= 1e-14 * l);
        for n in 3..=8 {
            let (a, b) = (lambda_n(n, 0.5), lambda_half(n));
            assert!((a - b).abs() <= 1e-14 * b, "n = {n}: {a} vs {b}");
        }
    }

    #[test]
    fn sharp_values() {
        let s = SharpExample::new(3, 0.5).unwrap();
        assert_eq!(s.beta, 3.0);
        let j = s.jet(1.0, 3).unwrap();
        assert!((j.value() + 1.0 / 14400.0).abs() < 1e-18);
        assert!((j.deriv(3) + 1.0 / 120.0).abs() < 1e-15);
        let z = s.jet(0.0, 3).unwrap();
        assert!(z.derivs().iter().all(|v| *v == 0.0));
        for (n, a) in [(3, 0.5), (4, 0.5), (3, 1.0 / 3.0)] {
            let s = SharpExample::new(n, a).unwrap();
            for x in SharpExample::sample_points(20) {
                assert!(s.identity_residual(x).unwrap() <= 1e-8, "n = {n}, alpha = {a}, x = {x}");
            }
        }
    }

    #[test]
    fn g_two_minimum() {
        let g = crate::oracle::expr(&g_i_source(2)).unwrap();
        assert_eq!(g.value(0.5).unwrap(), -0.25);
        assert_eq!(g.value(0.0).unwrap(), 0.0);
        assert_eq!(g.value(1.0).unwrap(), 0.0);
    }

    #[test]
    fn every_case_reproduces() {
        for (c, r) in cases().iter().zip(run_all()) {
            let o = r.unwrap_or_else(|e| panic!("{}: {e}", c.id));
            assert!(o.matched, "{}: expected {}, got {}", c.id, o.expected, o.status);
        }
    }

    #[test]
    fn ids_unique() {
        let c = cases();
        let mut ids: Vec<_> = c.iter().map(|c| c.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), c.len());
    }
}
