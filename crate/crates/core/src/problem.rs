//! Problem files: schema, validation and dispatch to the checkers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::barriers::{certify_sign, make_barrier, BarrierKind, Geometry, CERT_GRID};
use crate::comparison::{compare_contact, solve_for_operator, NonlinearOperator};
use crate::error::{Error, Result};
use crate::expr;
use crate::gallery::SharpExample;
use crate::hopf::{
    boundary_dichotomy, check_equivalent_form, check_hopf_left, check_hopf_right,
    check_third_order_bounded, small_interval_max_principle, unique_continuation_probe,
    uniqueness_probe, Endpoint, HopfProblem, Mode, NonlinearRhs, BOUND_FLOOR,
};
use crate::odeint::{
    default_step, integrate_linear_ivp, integrate_linear_ivp_from_right, integrate_nonlinear_ivp,
    solve_second_order_bvp, Rhs, Trajectory,
};
use crate::operator::{interior_grid, LinearOperator, Tolerances, DEFAULT_GRID};
use crate::oracle::{self, Oracle};
use crate::reduction::{reduce_chain, solve_f_ode, verify_reduction_identity};
use crate::verdict::{CheckItem, VerdictReport};

pub const PROBLEM_VERSION: &str = "hopfkit-problem-v1";

/// Default kick for the uniqueness control run.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Relative tolerance for the reduction identity.
pub const REDUCTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    HopfLeft,
    HopfRight,
    Equivalent,
    MaxPrinciple,
    ThirdOrderBounded,
    Boundary,
    Compare,
    Reduce,
    Barrier,
    Uniqueness,
}

/// Where a function comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// Expression in `x`.
    Expr(String),
    /// Initial value problem for the problem's own equation.
    Ivp(IvpSpec),
    /// The built-in sharp example.
    Sharp { n: usize, alpha: f64 },
    /// Two-point problem for a second-order operator.
    Bvp(BvpSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvpSpec {
    /// `u, u', ..., u^(n-1)` at the anchor.
    pub init: Vec<f64>,
    /// `q` in `L[u] = -q` (or `K[u] = -q`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<String>,
    /// `left` or `right` end of the interval; ignored for `compare`, which
    /// anchors at `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
}

impl IvpSpec {
    pub fn left(init: Vec<f64>, forcing: Option<&str>) -> Self {
        Self {
            init,
            forcing: forcing.map(str::to_string),
            at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpSpec {
    /// `g(c)`.
    pub left: f64,
    /// `g(d)`.
    pub right: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_i: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: String,
    pub kind: Kind,
    pub order: usize,
    pub interval: (f64, f64),
    /// `a_0, ..., a_{n-1}` as expressions in x; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<String>>,
    /// Declared bound on |a_i|; the sampled bound is used when larger.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Source>,
    /// `K(z1 = x, z2 = u, ..., z{n+2} = u^(n))` for `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<String>,
    /// `f(z1 = u, ..., zn = u^(n-1))` for `boundary`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<f64>,
    /// `[c, d]` for `max_principle`; the interval when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonneg_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Highest derivative order probed by the continuation check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Problem-file failures: bad JSON, bad expressions, inconsistent fields.
#[derive(Debug, Clone, ThisError)]
pub enum InputError {
    #[error("invalid problem file: {0}")]
    Json(String),
    #[error("{field}: {message} at position {position} (line {line}, column {column})")]
    Expression {
        field: String,
        message: String,
        position: usize,
        line: usize,
        column: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> InputError {
    InputError::Invalid(msg.into())
}

fn check_expr(field: &str, src: &str) -> std::result::Result<(), InputError> {
    expr::parse(src).map(|_| ()).map_err(|e| {
        let (line, column) = e.line_col(src);
        InputError::Expression {
            field: field.to_string(),
            message: e.message.clone(),
            position: e.position,
            line,
            column,
        }
    })
}

fn check_source(field: &str, s: &Source, n: usize) -> std::result::Result<(), InputError> {
    match s {
        Source::Expr(e) => check_expr(field, e),
        Source::Ivp(ivp) => {
            if ivp.init.len() != n {
                return Err(invalid(format!(
                    "{field}.ivp.init has {} entries, order is {n}",
                    ivp.init.len()
                )));
            }
            if let Some(q) = &ivp.forcing {
                check_expr(&format!("{field}.ivp.forcing"), q)?;
            }
            match ivp.at.as_deref() {
                None | Some("left") | Some("right") => Ok(()),
                Some(other) => Err(invalid(format!("{field}.ivp.at must be left or right, got {other:?}"))),
            }
        }
        Source::Sharp { n: sn, alpha } => {
            SharpExample::new(*sn, *alpha).map_err(|e| invalid(format!("{field}.sharp: {e}")))?;
            Ok(())
        }
        Source::Bvp(b) => {
            if n != 2 {
                return Err(invalid(format!("{field}.bvp needs order 2, got {n}")));
            }
            if let Some(q) = &b.forcing {
                check_expr(&format!("{field}.bvp.forcing"), q)?;
            }
            Ok(())
        }
    }
}

impl ProblemFile {
    pub fn new(kind: Kind, order: usize, interval: (f64, f64)) -> Self {
        Self {
            version: PROBLEM_VERSION.to_string(),
            kind,
            order,
            interval,
            coefficients: None,
            bound: None,
            u: None,
            v: None,
            k: None,
            rhs: None,
            endpoint: None,
            x0: None,
            reach: None,
            segment: None,
            nonneg_radius: None,
            barrier: None,
            epsilon: None,
            max_order: None,
            mode: None,
            grid: None,
            step: None,
            tolerances: None,
            seed: None,
        }
    }

    pub fn with_coefficients(mut self, c: &[&str]) -> Self {
        self.coefficients = Some(c.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_bound(mut self, c: f64) -> Self {
        self.bound = Some(c);
        self
    }

    pub fn with_u(mut self, s: Source) -> Self {
        self.u = Some(s);
        self
    }

    pub fn with_v(mut self, s: Source) -> Self {
        self.v = Some(s);
        self
    }

    pub fn with_k(mut self, k: &str) -> Self {
        self.k = Some(k.to_string());
        self
    }

    pub fn with_rhs(mut self, f: &str) -> Self {
        self.rhs = Some(f.to_string());
        self
    }

    pub fn with_endpoint(mut self, e: &str) -> Self {
        self.endpoint = Some(e.to_string());
        self
    }

    pub fn with_contact(mut self, x0: f64, reach: f64) -> Self {
        self.x0 = Some(x0);
        self.reach = Some(reach);
        self
    }

    pub fn with_nonneg_radius(mut self, r: f64) -> Self {
        self.nonneg_radius = Some(r);
        self
    }

    pub fn with_barrier(mut self, kind: &str, c: Option<f64>, x_i: Option<f64>) -> Self {
        self.barrier = Some(BarrierSpec {
            kind: kind.to_string(),
            c,
            x_i,
        });
        self
    }

    pub fn with_max_order(mut self, m: usize) -> Self {
        self.max_order = Some(m);
        self
    }

    /// Parses and validates a problem file.
    pub fn from_json(text: &str) -> std::result::Result<Self, InputError> {
        let p: ProblemFile = serde_json::from_str(text).map_err(|e| InputError::Json(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files serialize")
    }

    pub fn validate(&self) -> std::result::Result<(), InputError> {
        if self.version != PROBLEM_VERSION {
            return Err(invalid(format!(
                "unsupported version {:?}, expected {PROBLEM_VERSION:?}",
                self.version
            )));
        }
        let (a, b) = self.interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid(format!("interval [{a}, {b}] must be finite with a < b")));
        }
        let n = self.order;
        let min_order = match self.kind {
            Kind::Reduce => 3,
            Kind::Boundary | Kind::Compare => 1,
            _ => 2,
        };
        if n < min_order || n > 10 {
            return Err(invalid(format!("order {n} out of range for {:?}", self.kind)));
        }
        if let Some(c) = &self.coefficients {
            if c.len() != n {
                return Err(invalid(format!("{} coefficients given, order is {n}", c.len())));
            }
            for (i, e) in c.iter().enumerate() {
                check_expr(&format!("coefficients[{i}]"), e)?;
            }
        }
        if let Some(g) = self.grid {
            if g < 16 {
                return Err(invalid("grid must have at least 16 points"));
            }
        }
        if let Some(h) = self.step {
            if !(h > 0.0 && h < b - a) {
                return Err(invalid(format!("step {h} must lie in (0, {})", b - a)));
            }
        }
        if let Some(m) = &self.mode {
            if Mode::parse(m).is_none() {
                return Err(invalid(format!("mode must be direct or chain, got {m:?}")));
            }
        }
        if let Some(e) = &self.endpoint {
            if e != "left" && e != "right" {
                return Err(invalid(format!("endpoint must be left or right, got {e:?}")));
            }
        }
        if let Some(t) = &self.tolerances {
            if !(t.equality > 0.0 && t.positivity > 0.0) {
                return Err(invalid("tolerances must be positive"));
            }
        }
        let source_order = n;
        if let Some(u) = &self.u {
            check_source("u", u, source_order)?;
        }
        if let Some(v) = &self.v {
            check_source("v", v, source_order)?;
        }
        let need_u = !matches!(self.kind, Kind::Reduce | Kind::Barrier | Kind::Uniqueness);
        if need_u && self.u.is_none() {
            return Err(invalid(format!("{:?} needs a function u", self.kind)));
        }
        if let Some(Source::Sharp { n: sn, .. }) = &self.u {
            if *sn != n {
                return Err(invalid(format!("u.sharp.n = {sn} differs from order {n}")));
            }
        }
        match self.kind {
            Kind::Compare => {
                let k = self.k.as_deref().ok_or_else(|| invalid("compare needs k"))?;
                check_expr("k", k)?;
                NonlinearOperator::parse(k, n).map_err(|e| invalid(format!("k: {e}")))?;
                if self.v.is_none() {
                    return Err(invalid("compare needs a function v"));
                }
                let x0 = self.x0.unwrap_or(0.5 * (a + b));
                if !(x0 > a && x0 < b) {
                    return Err(invalid(format!("x0 = {x0} must lie inside the interval")));
                }
            }
            Kind::Boundary => {
                let f = self.rhs.as_deref().ok_or_else(|| invalid("boundary needs rhs"))?;
                check_expr("rhs", f)?;
                NonlinearRhs::parse(f, n).map_err(|e| invalid(format!("rhs: {e}")))?;
            }
            Kind::Barrier => {
                let spec = self.barrier.as_ref().ok_or_else(|| invalid("barrier kind needs a barrier block"))?;
                let kind = BarrierKind::parse(&spec.kind)
                    .ok_or_else(|| invalid(format!("unknown barrier {:?}", spec.kind)))?;
                if kind.operator_order() != n {
                    return Err(invalid(format!(
                        "{} needs order {}, got {n}",
                        spec.kind,
                        kind.operator_order()
                    )));
                }
            }
            Kind::HopfLeft | Kind::HopfRight => {
                if self.endpoint.is_some() {
                    return Err(invalid("hopf kinds fix the endpoint; drop the endpoint field"));
                }
            }
            Kind::ThirdOrderBounded => {
                if n != 3 {
                    return Err(invalid(format!("third_order_bounded needs order 3, got {n}")));
                }
            }
            Kind::Uniqueness => {
                if self.max_order.is_some() && self.u.is_none() {
                    return Err(invalid("max_order needs a function u"));
                }
            }
            _ => {}
        }
        if let Some((c, d)) = self.segment {
            if !(a <= c && c < d && d <= b) {
                return Err(invalid(format!("segment [{c}, {d}] must lie inside [{a}, {b}]")));
            }
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.grid.unwrap_or(DEFAULT_GRID)
    }

    pub fn step_size(&self) -> f64 {
        self.step.unwrap_or_else(|| default_step(self.interval.1 - self.interval.0))
    }

    pub fn tol(&self) -> Tolerances {
        self.tolerances.unwrap_or_default()
    }

    pub fn seed_value(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn run_mode(&self) -> Mode {
        self.mode.as_deref().and_then(Mode::parse).unwrap_or(Mode::Direct)
    }

    fn endpoint_value(&self) -> Endpoint {
        match self.endpoint.as_deref() {
            Some("right") => Endpoint::Right,
            _ => Endpoint::Left,
        }
    }

    /// Copy with every defaulted numeric setting written out, so the echo in
    /// a report reruns the problem exactly.
    pub fn resolved(&self) -> Self {
        let mut p = self.clone();
        p.grid = Some(self.grid_size());
        p.step = Some(self.step_size());
        p.tolerances = Some(self.tol());
        p.seed = Some(self.seed_value());
        if matches!(self.kind, Kind::HopfLeft | Kind::HopfRight) {
            p.mode = Some(match self.run_mode() {
                Mode::Direct => "direct".into(),
                Mode::Chain => "chain".into(),
            });
        }
        p
    }

    pub fn operator(&self) -> Result<LinearOperator> {
        let (a, b) = self.interval;
        let coeffs = match &self.coefficients {
            Some(c) => c.clone(),
            None => vec!["0".to_string(); self.order],
        };
        let mut op = LinearOperator::from_exprs(&coeffs, a, b)?;
        if let Some(c) = self.bound {
            op = op.with_declared_bound(c);
        }
        Ok(op)
    }
}

/// Settings that override the problem file from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub grid: Option<usize>,
    pub step: Option<f64>,
    pub tol: Option<f64>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, p: &mut ProblemFile) {
        if let Some(g) = self.grid {
            p.grid = Some(g);
        }
        if let Some(h) = self.step {
            p.step = Some(h);
        }
        if let Some(t) = self.tol {
            let mut tol = p.tol();
            tol.equality = t;
            p.tolerances = Some(tol);
        }
        if let Some(m) = self.mode {
            p.mode = Some(
                match m {
                    Mode::Direct => "direct",
                    Mode::Chain => "chain",
                }
                .into(),
            );
        }
        if let Some(s) = self.seed {
            p.seed = Some(s);
        }
    }
}

/// A verdict plus any trajectories computed on the way.
pub struct Outcome {
    pub report: VerdictReport,
    pub trajectories: Vec<(String, Arc<Trajectory>)>,
}

struct Ctx<'a> {
    p: &'a ProblemFile,
    trajectories: Vec<(String, Arc<Trajectory>)>,
}

impl Ctx<'_> {
    fn forcing(src: &Option<String>) -> Result<Option<Oracle>> {
        src.as_deref().map(oracle::expr).transpose()
    }

    /// Resolves a source against the linear operator of the problem.
    fn linear_source(&mut self, name: &str, s: &Source, op: &LinearOperator) -> Result<Oracle> {
        let h = self.p.step_size();
        match s {
            Source::Expr(e) => oracle::expr(e),
            Source::Sharp { n, alpha } => Ok(SharpExample::new(*n, *alpha)?.oracle()),
            Source::Ivp(ivp) => {
                let q = Self::forcing(&ivp.forcing)?;
                if ivp.at.as_deref() == Some("right") {
                    let (t, o) = integrate_linear_ivp_from_right(op, q, &ivp.init, h)?;
                    self.trajectories.push((format!("{name}_reflected"), t));
                    Ok(o)
                } else {
                    let t = Arc::new(integrate_linear_ivp(op, q, &ivp.init, h)?);
                    self.trajectories.push((name.to_string(), t.clone()));
                    Ok(t.oracle())
                }
            }
            Source::Bvp(bvp) => {
                let (c, d) = self.p.segment.unwrap_or(self.p.interval);
                let op = op.restricted(c, d)?;
                let q = Self::forcing(&bvp.forcing)?;
                let t = Arc::new(solve_second_order_bvp(&op, q, (c, bvp.left), (d, bvp.right), h)?);
                self.trajectories.push((name.to_string(), t.clone()));
                Ok(t.oracle())
            }
        }
    }
}

impl Ctx<'_> {
    fn hopf_problem(&mut self) -> Result<HopfProblem> {
        let p = self.p;
        let op = p.operator()?;
        let u = self.linear_source("u", p.u.as_ref().expect("validated"), &op)?;
        let endpoint = match p.kind {
            Kind::HopfLeft => Endpoint::Left,
            Kind::HopfRight => Endpoint::Right,
            _ => p.endpoint_value(),
        };
        Ok(HopfProblem::new(op, u, endpoint)
            .with_tolerances(p.tol())
            .with_grid(p.grid_size())
            .with_step(p.step_size()))
    }
}

/// The endpoint problem behind a `hopf_left`, `hopf_right`, `equivalent` or
/// `third_order_bounded` file.
pub fn hopf_problem(p: &ProblemFile) -> Result<HopfProblem> {
    p.validate().map_err(|e| Error::Argument(e.to_string()))?;
    if !matches!(
        p.kind,
        Kind::HopfLeft | Kind::HopfRight | Kind::Equivalent | Kind::ThirdOrderBounded
    ) {
        return Err(Error::Argument(format!("{:?} is not an endpoint problem", p.kind)));
    }
    Ctx {
        p,
        trajectories: Vec::new(),
    }
    .hopf_problem()
}

/// Runs the checker named by the problem's kind.
pub fn execute(p: &ProblemFile) -> Result<Outcome> {
    p.validate().map_err(|e| Error::Argument(e.to_string()))?;
    let mut ctx = Ctx {
        p,
        trajectories: Vec::new(),
    };
    let tol = p.tol();
    let grid = p.grid_size();
    let h = p.step_size();
    let (a, b) = p.interval;
    let report = match p.kind {
        Kind::HopfLeft | Kind::HopfRight | Kind::Equivalent | Kind::ThirdOrderBounded => {
            let hp = ctx.hopf_problem()?;
            match p.kind {
                Kind::HopfLeft => check_hopf_left(&hp, p.run_mode())?,
                Kind::HopfRight => check_hopf_right(&hp, p.run_mode())?,
                Kind::Equivalent => check_equivalent_form(&hp)?,
                _ => check_third_order_bounded(&hp, p.nonneg_radius.unwrap_or(b - a))?,
            }
        }
        Kind::MaxPrinciple => {
            let op = p.operator()?;
            let g = ctx.linear_source("g", p.u.as_ref().expect("validated"), &op)?;
            let (c, d) = p.segment.unwrap_or(p.interval);
            small_interval_max_principle(&op, &g, c, d, tol, grid)?
        }
        Kind::Boundary => {
            let f = NonlinearRhs::parse(p.rhs.as_deref().expect("validated"), p.order)?;
            let endpoint = p.endpoint_value();
            let u = match p.u.as_ref().expect("validated") {
                Source::Expr(e) => oracle::expr(e)?,
                Source::Sharp { n, alpha } => SharpExample::new(*n, *alpha)?.oracle(),
                Source::Ivp(ivp) => {
                    if endpoint == Endpoint::Right || ivp.at.as_deref() == Some("right") {
                        return Err(Error::Argument(
                            "boundary ivp sources are integrated from the left endpoint only".into(),
                        ));
                    }
                    let fc = f.clone();
                    let rhs: Rhs = Arc::new(move |x, s| fc.eval(x, s));
                    let t = Arc::new(integrate_nonlinear_ivp(rhs, &ivp.init, (a, b), h)?);
                    ctx.trajectories.push(("u".into(), t.clone()));
                    t.oracle()
                }
                Source::Bvp(_) => {
                    return Err(Error::Argument("boundary problems take expr, sharp or ivp sources".into()))
                }
            };
            boundary_dichotomy(&f, &u, (a, b), endpoint, tol, grid, p.seed_value())?
        }
        Kind::Compare => compare(&mut ctx)?,
        Kind::Reduce => reduce(&mut ctx)?,
        Kind::Barrier => barrier(p)?,
        Kind::Uniqueness => {
            let op = p.operator()?;
            match (p.max_order, &p.u) {
                (Some(m), Some(src)) => {
                    let u = ctx.linear_source("u", src, &op)?;
                    let hp = HopfProblem::new(op, u, Endpoint::Left)
                        .with_tolerances(tol)
                        .with_grid(grid)
                        .with_step(h);
                    unique_continuation_probe(&hp, m)?
                }
                _ => uniqueness_probe(&op, h, p.epsilon.unwrap_or(DEFAULT_EPSILON))?,
            }
        }
    };
    Ok(Outcome {
        report,
        trajectories: ctx.trajectories,
    })
}

fn compare(ctx: &mut Ctx) -> Result<VerdictReport> {
    let p = ctx.p;
    let (a, b) = p.interval;
    let h = p.step_size();
    let k = Arc::new(NonlinearOperator::parse(p.k.as_deref().expect("validated"), p.order)?);
    let x0 = p.x0.unwrap_or(0.5 * (a + b));
    let reach = p.reach.unwrap_or((x0 - a).min(b - x0)).min(x0 - a).min(b - x0);
    let mut resolve = |name: &str, s: &Source| -> Result<Oracle> {
        match s {
            Source::Expr(e) => oracle::expr(e),
            Source::Sharp { n, alpha } => Ok(SharpExample::new(*n, *alpha)?.oracle()),
            Source::Ivp(ivp) => {
                let q = Ctx::forcing(&ivp.forcing)?;
                let (t, o) = solve_for_operator(&k, q, x0, &ivp.init, (x0 - a, b - x0), h)?;
                ctx.trajectories.push((format!("{name}_forward"), t.forward.clone()));
                ctx.trajectories.push((format!("{name}_backward"), t.backward.clone()));
                Ok(o)
            }
            Source::Bvp(_) => Err(Error::Argument("compare takes expr, sharp or ivp sources".into())),
        }
    };
    let u = resolve("u", p.u.as_ref().expect("validated"))?;
    let v = resolve("v", p.v.as_ref().expect("validated"))?;
    let sp = compare_contact(&k, u.as_ref(), v.as_ref(), x0, reach, h, p.tol())?;
    let mut r = sp.verdict.clone();
    r.detail("parity", sp.parity)
        .detail("delta", sp.delta)
        .detail("left_required", sp.left_required)
        .detail("right_required", sp.right_required)
        .detail("induced_coefficients", &sp.induced_coefficients)
        .detail("max_identity_residual", sp.max_identity_residual)
        .detail("sampled_lipschitz", sp.sampled_lipschitz)
        .detail("quadrature_nodes", sp.quadrature_nodes)
        .detail("traces", &sp.traces);
    Ok(r)
}

fn probes() -> Result<Vec<Oracle>> {
    ["1", "x", "x^2", "sin(x)", "exp(x)"]
        .iter()
        .map(|s| oracle::expr(s))
        .collect()
}

fn reduce(ctx: &mut Ctx) -> Result<VerdictReport> {
    let p = ctx.p;
    let op = p.operator()?;
    let h = p.step_size();
    let step = solve_f_ode(&op, h)?;
    ctx.trajectories.push(("f".into(), step.f.clone()));
    let (lo, hi) = step.span();
    let mut probes = probes()?;
    if let Some(src) = &p.u {
        probes.push(ctx.linear_source("u", src, &op)?);
    }
    let check = verify_reduction_identity(&step, &probes, &interior_grid(lo, hi, p.grid_size().min(1024)), REDUCTION_TOL)?;
    let mut r = VerdictReport::new("reduce");
    r.conclusion(
        CheckItem::pass("reduction_identity", check.pass)
            .value(check.max_relative)
            .witness(check.worst_point)
            .required(format!("|L[u] - M[f u + u']| <= {REDUCTION_TOL} (1 + |L[u]|)")),
    );
    r.detail("identity", &check)
        .detail("span", [lo, hi])
        .detail("f_end", step.f.last_state())
        .detail("f_truncation", step.truncation())
        .detail("b_at_a", step.b_values(lo)?);
    if let (Some(_), true) = (&p.u, op.order() >= 3) {
        let u = probes.pop().expect("u pushed");
        match reduce_chain(&op, u, h, p.tol()) {
            Ok(chain) => {
                r.detail("chain", &chain.stages);
            }
            Err(Error::Reduction(msg)) => {
                r.note(format!("chain stopped: {msg}"));
            }
            Err(e) => return Err(e),
        }
    }
    if step.truncation().is_some() {
        r.note(format!("f-equation truncated; identity checked on [{lo}, {hi}]"));
    }
    Ok(r.finish())
}

fn barrier(p: &ProblemFile) -> Result<VerdictReport> {
    let spec = p.barrier.as_ref().expect("validated");
    let kind = BarrierKind::parse(&spec.kind).expect("validated");
    let op = p.operator()?;
    let (a, b) = p.interval;
    let c = spec.c.unwrap_or_else(|| op.bound().max(BOUND_FLOOR));
    let geometry = Geometry { a, b, x_i: spec.x_i };
    let bar = make_barrier(kind, c, geometry)?;
    let mut r = VerdictReport::new("barrier");
    let bound = op.bound();
    r.hypothesis(
        CheckItem::pass("coefficient_bound", bound <= c)
            .value(bound)
            .required(format!("max |a_i| <= {c}")),
    );
    let cert = certify_sign(&bar, &op, &bar.grid(CERT_GRID))?;
    r.conclusion(
        CheckItem::pass("sign_certificate", cert.pass)
            .value(cert.margin)
            .witness(cert.worst_point)
            .required(format!("sign * L[barrier] >= {}", crate::barriers::CERT_MARGIN)),
    );
    r.detail("barrier", &bar).detail("certificate", &cert);
    Ok(r.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verdict::Status;

    #[test]
    fn round_trip_json() {
        let p = ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("x - x^2".into()));
        let text = p.to_json();
        assert_eq!(ProblemFile::from_json(&text).unwrap(), p);
        assert!(text.contains("\"kind\": \"hopf_left\""));
        assert!(text.contains("\"expr\": \"x - x^2\""));
    }

    #[test]
    fn expression_diagnostics() {
        let p = ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("sin(".into()));
        match ProblemFile::from_json(&p.to_json()) {
            Err(InputError::Expression { field, position, .. }) => {
                assert_eq!(field, "u");
                assert_eq!(position, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(ProblemFile::from_json("{"), Err(InputError::Json(_))));
        let mut bad = ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("x".into()));
        bad.coefficients = Some(vec!["0".into()]);
        assert!(matches!(bad.validate(), Err(InputError::Invalid(_))));
    }

    #[test]
    fn dispatch_examples() {
        let p = ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("x - x^2".into()));
        let out = execute(&p).unwrap();
        assert_eq!(out.report.status, Status::Holds);
        let p = ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("-x".into()));
        assert_eq!(execute(&p).unwrap().report.status, Status::HypothesesUnmet);
    }

    #[test]
    fn overrides_reach_echo() {
        let mut p = ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("x".into()));
        Overrides {
            grid: Some(512),
            tol: Some(1e-9),
            mode: Some(Mode::Chain),
            ..Default::default()
        }
        .apply(&mut p);
        let r = p.resolved();
        assert_eq!(r.grid, Some(512));
        assert_eq!(r.tolerances.unwrap().equality, 1e-9);
        assert_eq!(r.mode.as_deref(), Some("chain"));
        assert_eq!(r.seed, Some(0));
    }
}
