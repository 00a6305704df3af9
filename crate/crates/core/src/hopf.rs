//! Executable Hopf-type statements: each checker measures the hypotheses and
//! conclusions of one statement and returns a [`VerdictReport`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barriers::{make_barrier, BarrierKind, Geometry};
use crate::error::{Error, Result};
use crate::expr::{self, Program, Var};
use crate::jet::Jet;
use crate::odeint::{default_step, integrate_linear_ivp};
use crate::operator::{
    closed_grid, detect_sequence_condition, endpoint_jet_check, interior_grid, one_sided_jet,
    scan_neighborhood, verify_inequality, LinearOperator, NeighborhoodScan, SequenceCheck,
    SequenceStatus, Side, Tolerances, DEFAULT_GRID,
};
use crate::oracle::{Backing, FnOracle, Oracle, Reflected};
use crate::reduction::reduce_chain;
use crate::verdict::{CheckItem, ItemStatus, VerdictReport};

/// Dyadic levels for neighborhood scans.
pub const SCAN_LEVELS: usize = 20;

/// Samples per dyadic level.
pub const SCAN_POINTS: usize = 512;

/// A detected neighborhood must span at least this many integration steps.
pub const MIN_RADIUS_STEPS: f64 = 8.0;

/// Smallest coefficient bound handed to the barrier constructions.
pub const BOUND_FLOOR: f64 = 0.01;

/// Random pairs drawn for the sampled Lipschitz constant.
pub const LIPSCHITZ_PAIRS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Left,
    Right,
}

impl Endpoint {
    /// Side of the endpoint on which the interval lies.
    pub fn side(self) -> Side {
        match self {
            Endpoint::Left => Side::Right,
            Endpoint::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Chain,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(Mode::Direct),
            "chain" => Some(Mode::Chain),
            _ => None,
        }
    }
}

#[derive(Clone)]
pub struct HopfProblem {
    pub op: LinearOperator,
    pub u: Oracle,
    pub endpoint: Endpoint,
    pub tol: Tolerances,
    /// Interior grid size for the inequality check.
    pub grid: usize,
    /// Step used for radius acceptance and for the reduction chain.
    pub h: f64,
}

impl HopfProblem {
    pub fn new(op: LinearOperator, u: Oracle, endpoint: Endpoint) -> Self {
        let h = default_step(op.span());
        Self {
            op,
            u,
            endpoint,
            tol: Tolerances::default(),
            grid: DEFAULT_GRID,
            h,
        }
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn endpoint_value(&self) -> f64 {
        let (a, b) = self.op.interval();
        match self.endpoint {
            Endpoint::Left => a,
            Endpoint::Right => b,
        }
    }

    /// The left-endpoint problem obtained by reflecting about `b`:
    /// `ū(x) = (-1)^n u(2b - x)` on `[b, 2b - a]`.
    pub fn reflected(&self) -> Result<HopfProblem> {
        let (_, b) = self.op.interval();
        let sigma = parity_sign(self.op.order());
        Ok(HopfProblem {
            op: self.op.reflect_about(b)?,
            u: Reflected::oracle(self.u.clone(), b, sigma),
            endpoint: match self.endpoint {
                Endpoint::Left => Endpoint::Right,
                Endpoint::Right => Endpoint::Left,
            },
            tol: self.tol,
            grid: self.grid,
            h: self.h,
        })
    }
}

/// `(-1)^n`.
pub fn parity_sign(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Maps quantities measured on a reflected left problem back to the
/// original right endpoint.
#[derive(Debug, Clone, Copy)]
struct Frame {
    pivot: Option<f64>,
    sigma: f64,
}

impl Frame {
    const IDENTITY: Frame = Frame {
        pivot: None,
        sigma: 1.0,
    };

    fn x(&self, x: f64) -> f64 {
        self.pivot.map_or(x, |p| 2.0 * p - x)
    }

    fn deriv(&self, k: usize, v: f64) -> f64 {
        match self.pivot {
            None => v,
            Some(_) => self.sigma * parity_sign(k) * v,
        }
    }

    fn name(&self) -> &'static str {
        if self.pivot.is_some() {
            "b"
        } else {
            "a"
        }
    }
}

fn sequence_item(name: &str, seq: &SequenceCheck, required: String, frame: Frame) -> CheckItem {
    let status = match seq.status {
        SequenceStatus::Pass => ItemStatus::Pass,
        SequenceStatus::Fail => ItemStatus::Fail,
        SequenceStatus::Undetermined => ItemStatus::Undetermined,
    };
    let mut item = CheckItem::new(name, status).required(required);
    if let Some(w) = seq.deepest_witness() {
        item = item.witness(frame.x(w.x)).value(frame.deriv(0, w.value));
    }
    match seq.status {
        SequenceStatus::Undetermined => {
            item.detail("no ladder rung resolves |u| above the positivity tolerance")
        }
        SequenceStatus::Fail => {
            let p = seq
                .deepest_resolvable
                .and_then(|j| seq.ladder.iter().find(|p| p.j == j));
            match p {
                Some(p) => item
                    .witness(frame.x(p.x))
                    .value(frame.deriv(0, p.value))
                    .detail(format!("deepest resolvable rung j = {} has the wrong sign", p.j)),
                None => item,
            }
        }
        SequenceStatus::Pass => item,
    }
}

fn radius_item(name: &str, scan: &NeighborhoodScan, h: f64, required: String, frame: Frame) -> CheckItem {
    let min_radius = MIN_RADIUS_STEPS * h;
    let (status, detail) = match scan.radius {
        None => (ItemStatus::Fail, "fails on every dyadic neighborhood".to_string()),
        Some(r) if r >= min_radius => (ItemStatus::Pass, format!("detected radius {r}")),
        Some(r) => (
            ItemStatus::Undetermined,
            format!("detected radius {r} is below {MIN_RADIUS_STEPS} steps ({min_radius})"),
        ),
    };
    let mut item = CheckItem::new(name, status)
        .required(required)
        .witness(frame.x(scan.worst_point))
        .detail(detail);
    if scan.margin.is_finite() {
        item = item.margin(scan.margin);
    }
    if let Some(r) = scan.radius {
        item = item.value(r);
    }
    item
}

fn inequality_item(op: &LinearOperator, u: &Oracle, grid: &[f64], tol: f64, frame: Frame) -> Result<(CheckItem, serde_json::Value)> {
    let check = verify_inequality(op, u.as_ref(), grid, tol)?;
    let item = CheckItem::pass("differential_inequality", check.pass)
        .value(check.max_value)
        .required(format!("max L[u] <= {tol} * {}", check.scale))
        .witness(frame.x(check.worst_point));
    Ok((item, serde_json::to_value(&check).unwrap_or_default()))
}

/// Left-endpoint sequential Hopf check.
pub fn check_hopf_left(p: &HopfProblem, mode: Mode) -> Result<VerdictReport> {
    if p.endpoint != Endpoint::Left {
        return Err(Error::Argument("check_hopf_left needs a left-endpoint problem".into()));
    }
    hopf_core(p, mode, Frame::IDENTITY, "hopf_left")
}

/// Right-endpoint check, run on the reflected left problem and mapped back.
pub fn check_hopf_right(p: &HopfProblem, mode: Mode) -> Result<VerdictReport> {
    if p.endpoint != Endpoint::Right {
        return Err(Error::Argument("check_hopf_right needs a right-endpoint problem".into()));
    }
    let (_, b) = p.op.interval();
    let n = p.op.order();
    let frame = Frame {
        pivot: Some(b),
        sigma: parity_sign(n),
    };
    let mut report = hopf_core(&p.reflected()?, mode, frame, "hopf_right")?;
    report.note(format!(
        "checked as the left problem for {}u(2*{b} - x) on the reflected interval",
        if n % 2 == 0 { "" } else { "-" }
    ));
    Ok(report)
}

/// Dispatches on the problem's endpoint.
pub fn check_hopf(p: &HopfProblem, mode: Mode) -> Result<VerdictReport> {
    match p.endpoint {
        Endpoint::Left => check_hopf_left(p, mode),
        Endpoint::Right => check_hopf_right(p, mode),
    }
}

fn hopf_core(p: &HopfProblem, mode: Mode, frame: Frame, checker: &str) -> Result<VerdictReport> {
    let n = p.op.order();
    let (a, b) = p.op.interval();
    let span = b - a;
    let e = frame.name();
    let right = frame.pivot.is_some();
    let mut r = VerdictReport::new(checker);

    let (item, detail) = inequality_item(&p.op, &p.u, &interior_grid(a, b, p.grid), p.tol.equality, frame)?;
    r.hypothesis(item).detail("inequality", detail);

    let jets = endpoint_jet_check(p.u.as_ref(), a, Side::Right, n, p.tol.equality)?;
    for it in &jets.items {
        r.hypothesis(
            CheckItem::pass(format!("zero_derivative_{}", it.order), it.pass)
                .value(frame.deriv(it.order, it.value))
                .required(format!("|u^({})({e})| <= {}", it.order, p.tol.equality)),
        );
    }
    if jets.one_sided_limit {
        r.note("endpoint jet taken as a one-sided limit");
    }

    let seq = detect_sequence_condition(p.u.as_ref(), a, Side::Right, span, 1.0, p.tol.positivity)?;
    let seq_required = if right && n % 2 == 1 {
        "u(x_i) < 0 along x_i -> b-"
    } else if right {
        "u(x_i) > 0 along x_i -> b-"
    } else {
        "u(x_i) > 0 along x_i -> a+"
    };
    r.hypothesis(sequence_item("sequence_condition", &seq, seq_required.into(), frame));
    r.detail("sequence", &seq);

    let top = frame.deriv(n - 1, jets.top);
    let top_required = if right {
        format!("u^({})(b) < -{}", n - 1, p.tol.positivity)
    } else {
        format!("u^({})(a) > {}", n - 1, p.tol.positivity)
    };
    r.conclusion(
        CheckItem::pass("endpoint_derivative", jets.top > p.tol.positivity)
            .value(top)
            .margin(jets.top - p.tol.positivity)
            .required(top_required),
    );

    let u = p.u.clone();
    let scan = scan_neighborhood(
        a,
        Side::Right,
        span,
        SCAN_LEVELS,
        SCAN_POINTS,
        |x| u.value(x),
        |m| m > 0.0,
    )?;
    let nb_required = match (right, n % 2) {
        (false, _) => "u > 0 on (a, a + r] with r >= 8h",
        (true, 0) => "u > 0 on [b - r, b) with r >= 8h",
        (true, _) => "u < 0 on [b - r, b) with r >= 8h",
    };
    r.conclusion(radius_item("positive_neighborhood", &scan, p.h, nb_required.into(), frame));
    r.detail("neighborhood", &scan);

    if mode == Mode::Chain {
        if r.hypotheses_pass() {
            chain_items(p, &mut r)?;
        } else {
            r.note("chain replay skipped: hypotheses not met");
        }
        if right {
            r.note("chain quantities refer to the reflected problem");
        }
    }
    r.detail("order", n);
    let original = match frame.pivot {
        Some(pivot) => [frame.x(b), pivot],
        None => [a, b],
    };
    r.detail("interval", original);
    r.detail("mode", mode);
    r.detail("h", p.h);
    Ok(r.finish())
}

fn chain_items(p: &HopfProblem, r: &mut VerdictReport) -> Result<()> {
    let n = p.op.order();
    if n == 2 {
        return subsolution_items(&p.op, &p.u, p.tol, r);
    }
    let chain = match reduce_chain(&p.op, p.u.clone(), p.h, p.tol) {
        Ok(c) => c,
        Err(Error::Reduction(msg)) => {
            r.conclusion(CheckItem::new("reduction_chain", ItemStatus::Undetermined).detail(msg));
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    for s in &chain.stages {
        let k = s.reduced_order;
        let status = if s.sequence != SequenceStatus::Pass {
            ItemStatus::Undetermined
        } else {
            ItemStatus::from_bool(s.v_top > p.tol.positivity && s.v_zero_jet.iter().all(|i| i.pass))
        };
        let mut item = CheckItem::new(format!("stage_{}_top_derivative", s.level), status)
            .value(s.v_top)
            .required(format!("v^({})(a) > {} for the order-{k} stage", k - 1, p.tol.positivity))
            .margin(s.v_top - p.tol.positivity);
        if let Some(w) = &s.witness {
            item = item.witness(w.x);
        }
        r.conclusion(item);
    }
    r.detail("chain", &chain.stages);
    subsolution_items(chain.final_operator(), chain.final_function(), p.tol, r)
}

/// The order-2 end of the argument: `g = v - ε(e^{λ(x-a)} - 1)` with
/// `ε = v(x_{i0}) / (e^{λ(x_{i0}-a)} - 1)` for a witness `x_{i0} < a + δ`.
fn subsolution_items(op2: &LinearOperator, v: &Oracle, tol: Tolerances, r: &mut VerdictReport) -> Result<()> {
    let (a, end) = op2.interval();
    let c = op2.bound().max(BOUND_FLOOR);
    let geometry = Geometry::interval(a, end);
    let delta = make_barrier(BarrierKind::SmallIntervalH, c, geometry)?.param("delta");
    let lambda = make_barrier(BarrierKind::ExpSubsolution, c, geometry)?.param("lambda");
    let reach = delta.min(end - a);
    let seq = detect_sequence_condition(v.as_ref(), a, Side::Right, reach, 1.0, tol.positivity)?;
    let Some(w) = seq.witnesses.first().cloned() else {
        r.conclusion(
            CheckItem::new("subsolution", ItemStatus::Undetermined)
                .detail(format!("no positivity witness within delta = {delta}")),
        );
        return Ok(());
    };
    let x0 = w.x;
    let eps = w.value / (lambda * (x0 - a)).exp_m1();
    let grid = closed_grid(a, x0, SCAN_POINTS + 1);
    let mut min_g = f64::INFINITY;
    let mut at = a;
    for &x in &grid {
        let g = v.value(x)? - eps * (lambda * (x - a)).exp_m1();
        if g < min_g {
            min_g = g;
            at = x;
        }
    }
    r.conclusion(
        CheckItem::pass("lemma_g_nonnegative", min_g >= -tol.equality)
            .value(min_g)
            .witness(at)
            .required(format!("g >= -{} on [a, x_i0]", tol.equality)),
    );
    let (j, _) = one_sided_jet(v.as_ref(), a, Side::Right, 1)?;
    let slope = j.deriv(1);
    r.conclusion(
        CheckItem::pass("subsolution_slope", slope >= eps * lambda - tol.equality && slope > 0.0)
            .value(slope)
            .margin(slope - eps * lambda)
            .required("v'(a) >= epsilon * lambda > 0"),
    );
    r.detail(
        "subsolution",
        serde_json::json!({
            "C": c, "delta": delta, "lambda": lambda, "x_i0": x0,
            "epsilon": eps, "min_g": min_g,
        }),
    );
    Ok(())
}

/// Full-zero-jet form: `u ≤ 0` near `a`; near `b`, `u ≤ 0` for even n and
/// `u ≥ 0` for odd n.
pub fn check_equivalent_form(p: &HopfProblem) -> Result<VerdictReport> {
    let n = p.op.order();
    let (a, b) = p.op.interval();
    let e = p.endpoint_value();
    let side = p.endpoint.side();
    let mut r = VerdictReport::new("equivalent_form");
    let (item, detail) = inequality_item(&p.op, &p.u, &interior_grid(a, b, p.grid), p.tol.equality, Frame::IDENTITY)?;
    r.hypothesis(item).detail("inequality", detail);
    let jets = endpoint_jet_check(p.u.as_ref(), e, side, n + 1, p.tol.equality)?;
    for it in &jets.items {
        r.hypothesis(
            CheckItem::pass(format!("zero_derivative_{}", it.order), it.pass)
                .value(it.value)
                .required(format!("|u^({})| <= {}", it.order, p.tol.equality)),
        );
    }
    let sign = match p.endpoint {
        Endpoint::Left => -1.0,
        Endpoint::Right => -parity_sign(n),
    };
    let u = p.u.clone();
    let floor = -p.tol.positivity;
    let scan = scan_neighborhood(e, side, b - a, SCAN_LEVELS, SCAN_POINTS, |x| Ok(sign * u.value(x)?), |m| m >= floor)?;
    let required = if sign < 0.0 { "u <= 0 near the endpoint" } else { "u >= 0 near the endpoint" };
    r.conclusion(radius_item("parity_sign", &scan, p.h, required.into(), Frame::IDENTITY));
    r.detail("neighborhood", &scan);
    r.detail("required_sign", sign);
    r.detail("u_n_at_endpoint", jets.top);
    Ok(r.finish())
}

/// Second-order maximum principle on a short interval `[c, d]`.
pub fn small_interval_max_principle(
    op2: &LinearOperator,
    g: &Oracle,
    c: f64,
    d: f64,
    tol: Tolerances,
    grid: usize,
) -> Result<VerdictReport> {
    let mut r = VerdictReport::new("max_principle");
    if op2.order() != 2 {
        let (min, at) = grid_min(g, c, d, grid)?;
        let lg = verify_inequality(op2, g.as_ref(), &interior_grid(c, d, grid), tol.equality)?;
        r.detail("min_g", min)
            .detail("min_at", at)
            .detail("g_c", g.value(c)?)
            .detail("g_d", g.value(d)?)
            .detail("max_lg", lg.max_value);
        return Ok(r.not_applicable(format!(
            "the small-interval maximum principle is a second-order statement; operator has order {} \
             (see the g_i counterexamples in the gallery)",
            op2.order()
        )));
    }
    if !(d > c) {
        return Err(Error::Argument(format!("need c < d, got [{c}, {d}]")));
    }
    let op = op2.restricted(c, d)?;
    let bound = op.bound();
    let cb = bound.max(BOUND_FLOOR);
    let barrier = make_barrier(BarrierKind::SmallIntervalH, cb, Geometry::interval(c, d))?;
    let delta = barrier.param("delta");
    r.detail("C", cb).detail("delta", delta).detail("length", d - c);
    r.detail("gamma", barrier.param("gamma"));
    if bound < BOUND_FLOOR {
        r.note(format!("coefficient bound {bound} floored at {BOUND_FLOOR}"));
    }
    if d - c >= delta {
        return Ok(r.not_applicable(format!("interval length {} is not below delta(C) = {delta}", d - c)));
    }
    let (item, detail) = inequality_item(&op, g, &interior_grid(c, d, grid), tol.equality, Frame::IDENTITY)?;
    r.hypothesis(item).detail("inequality", detail);
    for (name, x) in [("boundary_c", c), ("boundary_d", d)] {
        let v = g.value(x)?;
        r.hypothesis(
            CheckItem::pass(name, v >= -tol.equality)
                .value(v)
                .witness(x)
                .required(format!("g >= -{}", tol.equality)),
        );
    }
    let (min, at) = grid_min(g, c, d, grid)?;
    r.conclusion(
        CheckItem::pass("nonnegative", min >= -tol.equality)
            .value(min)
            .witness(at)
            .required(format!("min g >= -{} on [c, d]", tol.equality)),
    );
    Ok(r.finish())
}

/// Minimum of `g` on an odd-sized closed grid of `[c, d]`, so the midpoint
/// is sampled.
fn grid_min(g: &Oracle, c: f64, d: f64, grid: usize) -> Result<(f64, f64)> {
    let mut min = f64::INFINITY;
    let mut at = c;
    for x in closed_grid(c, d, grid | 1) {
        let v = g.value(x)?;
        if v < min {
            min = v;
            at = x;
        }
    }
    Ok((min, at))
}

/// Third-order check with merely bounded coefficients and `u ≥ 0` near `a`,
/// via the quotient `z = u/m`.
pub fn check_third_order_bounded(p: &HopfProblem, nonneg_radius: f64) -> Result<VerdictReport> {
    let r = VerdictReport::new("third_order_bounded");
    if p.op.order() != 3 {
        return Ok(r.not_applicable(format!("needs a third-order operator, got order {}", p.op.order())));
    }
    if p.endpoint != Endpoint::Left {
        return Ok(r.not_applicable("stated at the left endpoint only"));
    }
    let (a, b) = p.op.interval();
    let mut r = r;
    let bound = p.op.bound();
    let c = bound.max(BOUND_FLOOR);
    if bound < BOUND_FLOOR {
        r.note(format!("coefficient bound {bound} floored at {BOUND_FLOOR}"));
    }
    let m = make_barrier(BarrierKind::ThirdOrderM, c, Geometry::interval(a, b))?;
    let eta = m.param("eta");
    r.detail("C", c).detail("theta", m.param("theta")).detail("eta", eta);
    r.detail("barrier", &m.expression);

    let (item, detail) = inequality_item(&p.op, &p.u, &interior_grid(a, b, p.grid), p.tol.equality, Frame::IDENTITY)?;
    r.hypothesis(item).detail("inequality", detail);
    let jets = endpoint_jet_check(p.u.as_ref(), a, Side::Right, 3, p.tol.equality)?;
    for it in &jets.items {
        r.hypothesis(
            CheckItem::pass(format!("zero_derivative_{}", it.order), it.pass)
                .value(it.value)
                .required(format!("|u^({})(a)| <= {}", it.order, p.tol.equality)),
        );
    }
    let radius = nonneg_radius.min(b - a);
    let mut min_u = f64::INFINITY;
    let mut at = a;
    for x in closed_grid(a, a + radius, SCAN_POINTS + 1).into_iter().skip(1) {
        let v = p.u.value(x)?;
        if v < min_u {
            min_u = v;
            at = x;
        }
    }
    r.hypothesis(
        CheckItem::pass("nonnegative_near_a", min_u >= -p.tol.positivity)
            .value(min_u)
            .witness(at)
            .required(format!("u >= 0 on (a, a + {radius}]")),
    );
    let seq = detect_sequence_condition(p.u.as_ref(), a, Side::Right, b - a, 1.0, p.tol.positivity)?;
    r.hypothesis(sequence_item("sequence_condition", &seq, "u(x_i) > 0 along x_i -> a+".into(), Frame::IDENTITY));

    // z = u/m and the starred coefficients on [a, a + η].
    let u = p.u.clone();
    let mo = m.oracle.clone();
    let z: Oracle = FnOracle::new("u/m", move |x, k| Ok(u.jet(x, k)?.div(&mo.jet(x, k)?)?))
        .with_max_order(p.u.max_order())
        .into_oracle();
    let starred = |x: f64| -> Result<[f64; 3]> {
        let mj = m.oracle.jet(x, 3)?;
        let av = p.op.coefficient_values(x)?;
        let (m0, m1, m2) = (mj.deriv(0), mj.deriv(1), mj.deriv(2));
        let lm = p.op.apply_jet(&mj)?;
        Ok([lm / m0, (3.0 * m2 + 2.0 * av[2] * m1) / m0 + av[1], 3.0 * m1 / m0 + av[2]])
    };
    let mgrid = closed_grid(a, a + eta, SCAN_POINTS + 1);
    let mut min_a0 = f64::INFINITY;
    let mut a0_at = a;
    let mut max_star: f64 = 0.0;
    let mut worst_v = f64::NEG_INFINITY;
    let mut worst_v_at = a;
    let mut scale: f64 = 1.0;
    for &x in &mgrid {
        let s = starred(x)?;
        if s[0] < min_a0 {
            min_a0 = s[0];
            a0_at = x;
        }
        max_star = max_star.max(s.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())));
        if x > a {
            let zj = z.jet(x, 3)?;
            let lv = zj.deriv(3) + s[2] * zj.deriv(2) + s[1] * zj.deriv(1);
            scale = scale.max(1.0 + lv.abs());
            if lv > worst_v {
                worst_v = lv;
                worst_v_at = x;
            }
        }
    }
    let a0_status = if min_a0 > 0.0 { ItemStatus::Pass } else { ItemStatus::Undetermined };
    r.conclusion(
        CheckItem::new("a0_star_positive", a0_status)
            .value(min_a0)
            .witness(a0_at)
            .required("L[m]/m > 0 on [a, a + eta]"),
    );
    r.detail("starred_bound", max_star);
    let (zj, _) = one_sided_jet(z.as_ref(), a, Side::Right, 2)?;
    let z_ok = zj.deriv(0).abs() <= p.tol.equality && zj.deriv(1).abs() <= p.tol.equality;
    r.conclusion(
        CheckItem::pass("quotient_zero_jet", z_ok)
            .value(zj.deriv(1))
            .required("z(a) = z'(a) = 0"),
    );
    r.conclusion(
        CheckItem::pass("reduced_inequality", worst_v <= p.tol.equality * scale)
            .value(worst_v)
            .witness(worst_v_at)
            .required("v'' + a2* v' + a1* v <= 0 for v = z'"),
    );
    let zc = z.clone();
    let v: Oracle = FnOracle::new("z'", move |x, k| Ok(zc.jet(x, k + 1)?.derivative()?))
        .with_max_order(p.u.max_order().saturating_sub(1))
        .into_oracle();
    let vseq = detect_sequence_condition(v.as_ref(), a, Side::Right, eta, 1.0, p.tol.positivity)?;
    r.conclusion(sequence_item("v_sequence", &vseq, "z'(x_i) > 0 along x_i -> a+".into(), Frame::IDENTITY));
    let m_a = m.oracle.value(a)?;
    let via = m_a * zj.deriv(2);
    let direct = jets.top;
    r.conclusion(
        CheckItem::pass("quotient_identity", (via - direct).abs() <= 1e-8 * (1.0 + direct.abs()))
            .value(via)
            .margin((via - direct).abs())
            .required("u''(a) = m(a) z''(a)"),
    );
    r.conclusion(
        CheckItem::pass("endpoint_second_derivative", direct > p.tol.positivity)
            .value(direct)
            .margin(direct - p.tol.positivity)
            .required(format!("u''(a) > {}", p.tol.positivity)),
    );
    r.detail("z_second_derivative", zj.deriv(2));
    r.detail("m_at_a", m_a);
    Ok(r.finish())
}

/// Autonomous right-hand side `f(z1, ..., zn)` with `z{k+1}` standing for
/// `u^(k)`; `x` may also appear.
#[derive(Debug, Clone)]
pub struct NonlinearRhs {
    n: usize,
    source: String,
    program: Program,
}

impl NonlinearRhs {
    pub fn parse(source: &str, n: usize) -> Result<Self> {
        let ast = expr::parse(source)?;
        for v in ast.variables() {
            if let Var::Z(k) = v {
                if k == 0 || k > n {
                    return Err(Error::Argument(format!(
                        "variable z{k} out of range for order {n}: use z1..z{n}"
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

    pub fn eval(&self, x: f64, z: &[f64]) -> Result<f64> {
        Ok(self.program.eval(x, &z[..z.len().min(self.n)])?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzSample {
    /// Largest ratio over pairs drawn from the bounding box.
    pub box_ratio: f64,
    /// Largest ratio over pairs drawn from the box shrunk by 2^-30 around 0.
    pub local_ratio: f64,
    pub pairs: usize,
    pub seed: u64,
    pub suspect: bool,
}

fn sample_lipschitz(f: &NonlinearRhs, x: f64, lo: &[f64], hi: &[f64], seed: u64) -> Result<LipschitzSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = lo.len();
    let ratio = |scale: f64, rng: &mut ChaCha8Rng| -> Result<f64> {
        let mut best: f64 = 0.0;
        for _ in 0..LIPSCHITZ_PAIRS / 2 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..n)
                    .map(|k| scale * (lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>()))
                    .collect()
            };
            let p = draw(rng);
            let q = draw(rng);
            let dist = p.iter().zip(&q).fold(0.0f64, |acc, (s, t)| acc.max((s - t).abs()));
            if dist > 0.0 {
                let df = (f.eval(x, &p)? - f.eval(x, &q)?).abs();
                if df.is_finite() {
                    best = best.max(df / dist);
                }
            }
        }
        Ok(best)
    };
    let box_ratio = ratio(1.0, &mut rng)?;
    let local_ratio = ratio(2f64.powi(-30), &mut rng)?;
    Ok(LipschitzSample {
        box_ratio,
        local_ratio,
        pairs: LIPSCHITZ_PAIRS,
        seed,
        suspect: local_ratio > 100.0 * box_ratio.max(1.0),
    })
}

/// Boundary behaviour of `u^(n) = f(u, ..., u^(n-1))` at a zero of order
/// n-1 where `u > 0` on one side.
pub fn boundary_dichotomy(
    f: &NonlinearRhs,
    u: &Oracle,
    interval: (f64, f64),
    endpoint: Endpoint,
    tol: Tolerances,
    grid: usize,
    seed: u64,
) -> Result<VerdictReport> {
    let n = f.order();
    let (a, b) = interval;
    let h = default_step(b - a);
    let (e, side) = match endpoint {
        Endpoint::Left => (a, Side::Right),
        Endpoint::Right => (b, Side::Left),
    };
    let mut r = VerdictReport::new("boundary_dichotomy");

    let pts = interior_grid(a, b, grid);
    let mut worst = 0.0f64;
    let mut worst_at = a;
    let mut top_scale = 0.0f64;
    let mut lo = vec![0.0f64; n];
    let mut hi = vec![0.0f64; n];
    for &x in &pts {
        let j = u.jet(x, n)?;
        let z = &j.derivs()[..n];
        for k in 0..n {
            lo[k] = lo[k].min(z[k]);
            hi[k] = hi[k].max(z[k]);
        }
        let res = (j.deriv(n) - f.eval(x, z)?).abs();
        top_scale = top_scale.max(j.deriv(n).abs());
        if res > worst {
            worst = res;
            worst_at = x;
        }
    }
    let scale = 1.0 + top_scale;
    r.hypothesis(
        CheckItem::pass("equation_residual", worst <= tol.equality * scale)
            .value(worst)
            .witness(worst_at)
            .required(format!("|u^(n) - f| <= {} * {scale}", tol.equality)),
    );
    let jets = endpoint_jet_check(u.as_ref(), e, side, n + 1, tol.equality)?;
    for it in jets.items.iter().take(n - 1) {
        r.hypothesis(
            CheckItem::pass(format!("zero_derivative_{}", it.order), it.pass)
                .value(it.value)
                .required(format!("|u^({})| <= {}", it.order, tol.equality)),
        );
    }
    let uu = u.clone();
    let pos = scan_neighborhood(e, side, b - a, SCAN_LEVELS, SCAN_POINTS, |x| uu.value(x), |m| m > 0.0)?;
    r.hypothesis(radius_item("positive_neighborhood", &pos, h, "u > 0 near the endpoint".into(), Frame::IDENTITY));

    let top = jets.items[n - 1].value;
    let next = jets.top;
    let (s1, s2) = match endpoint {
        Endpoint::Left => (1.0, 1.0),
        Endpoint::Right => (-parity_sign(n), parity_sign(n)),
    };
    let f0 = f.eval(e, &vec![0.0; n])?;
    let case = if f0 <= 0.0 { 1 } else { 2 };
    let branch1 = s1 * top > tol.positivity;
    let branch2 = top.abs() <= tol.equality && s2 * next > tol.positivity;
    let branch = if branch1 {
        Some(1)
    } else if branch2 {
        Some(2)
    } else {
        None
    };
    r.conclusion(
        CheckItem::pass("branch", branch.is_some())
            .value(top)
            .required(match endpoint {
                Endpoint::Left => "u^(n-1)(a) > 0, or u^(n-1)(a) = 0 and u^(n)(a) > 0",
                Endpoint::Right => "(-1)^(n-1) u^(n-1)(b) > 0, or u^(n-1)(b) = 0 and (-1)^n u^(n)(b) > 0",
            })
            .detail(format!("u^(n-1) = {top}, u^(n) = {next}, f(0,...,0) = {f0}")),
    );
    let slope_sign = side.sign();
    let uu = u.clone();
    let mono = scan_neighborhood(
        e,
        side,
        b - a,
        SCAN_LEVELS,
        SCAN_POINTS,
        |x| Ok(slope_sign * uu.jet(x, 1)?.deriv(1)),
        |m| m > 0.0,
    )?;
    let mono_required = match endpoint {
        Endpoint::Left => "u' > 0 near a",
        Endpoint::Right => "u' < 0 near b",
    };
    r.conclusion(radius_item("strictly_monotone", &mono, h, mono_required.into(), Frame::IDENTITY));

    let lip = sample_lipschitz(f, e, &lo, &hi, seed)?;
    if lip.suspect {
        r.note(format!(
            "sampled Lipschitz ratios grow from {} on the solution box to {} near the origin: \
             f does not appear Lipschitz, so the statement's hypothesis is violated",
            lip.box_ratio, lip.local_ratio
        ));
    }
    r.detail("case", case).detail("branch", branch).detail("f_at_zero", f0);
    r.detail("lipschitz", &lip).detail("monotone_neighborhood", &mono);
    r.detail("rhs", f.source());
    Ok(r.finish())
}

/// Zero data gives the zero solution; a control run with `u^(n-1)(a) = ε`
/// must leave zero.
pub fn uniqueness_probe(op: &LinearOperator, h: f64, eps: f64) -> Result<VerdictReport> {
    let n = op.order();
    let (a, b) = op.interval();
    let mut r = VerdictReport::new("uniqueness");
    let zero = integrate_linear_ivp(op, None, &vec![0.0; n], h)?;
    let sup = (0..zero.len()).fold(0.0f64, |acc, i| acc.max(zero.state(i)[0].abs()));
    r.conclusion(
        CheckItem::pass("zero_solution", sup <= 1e-12)
            .value(sup)
            .required("sup |u| <= 1e-12"),
    );
    let mut init = vec![0.0; n];
    init[n - 1] = eps;
    let control = integrate_linear_ivp(op, None, &init, h)?;
    let c = op.bound();
    let reach = (b - a).min(1.0 / (4.0 * (1.0 + c)));
    let fact: f64 = (1..n).map(|k| k as f64).product();
    let threshold = eps.abs() * reach.powi(n as i32 - 1) / (2.0 * fact);
    let peak = (0..control.len()).fold(0.0f64, |acc, i| acc.max(control.state(i)[0].abs()));
    r.conclusion(
        CheckItem::pass("control_departs", peak >= threshold)
            .value(peak)
            .margin(peak - threshold)
            .required(format!("max |u| >= {threshold}")),
    );
    r.detail("epsilon", eps).detail("reach", reach).detail("C", c).detail("h", h);
    Ok(r.finish())
}

/// Reports the first non-vanishing derivative at `a` up to `max_order`.
pub fn unique_continuation_probe(p: &HopfProblem, max_order: usize) -> Result<VerdictReport> {
    let n = p.op.order();
    if p.u.backing() == Backing::Trajectory && max_order > n - 1 {
        return Err(Error::Capability(format!(
            "trajectory-backed u: derivatives beyond order {} at the endpoint are not available",
            n - 1
        )));
    }
    if p.endpoint != Endpoint::Left {
        return Err(Error::Argument("unique continuation probe is stated at the left endpoint".into()));
    }
    let (a, b) = p.op.interval();
    let mut r = VerdictReport::new("unique_continuation");
    let (item, detail) = inequality_item(&p.op, &p.u, &interior_grid(a, b, p.grid), p.tol.equality, Frame::IDENTITY)?;
    r.hypothesis(item).detail("inequality", detail);
    let seq = detect_sequence_condition(p.u.as_ref(), a, Side::Right, b - a, 1.0, p.tol.positivity)?;
    r.hypothesis(sequence_item("sequence_condition", &seq, "u(x_i) > 0 along x_i -> a+".into(), Frame::IDENTITY));
    let (j, _): (Jet, bool) = one_sided_jet(p.u.as_ref(), a, Side::Right, max_order)?;
    let first = j.derivs().iter().position(|v| v.abs() > p.tol.positivity);
    let mut item = CheckItem::pass("first_nonvanishing_order", first.is_some_and(|k| k <= n - 1))
        .required(format!("some u^(k)(a) != 0 with k <= {}", n - 1));
    if let Some(k) = first {
        item = item.value(j.deriv(k)).detail(format!("order {k}"));
    }
    r.conclusion(item);
    r.detail("first_order", first).detail("jet", j.derivs());
    Ok(r.finish())
}
