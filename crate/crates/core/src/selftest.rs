//! Randomized property suites and the gallery run behind `hopfkit selftest`.
//!
//! Every case draws from its own ChaCha stream derived from the seed, the
//! suite and the case index, so results do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::barriers::{certify_sign, make_barrier, BarrierKind, Geometry, CERT_GRID};
use crate::comparison::{compare_contact, solve_for_operator, NonlinearOperator};
use crate::error::Result;
use crate::expr::literal;
use crate::gallery;
use crate::hopf::{
    check_equivalent_form, check_hopf_left, small_interval_max_principle, uniqueness_probe,
    Endpoint, HopfProblem, Mode,
};
use crate::odeint::{
    default_step, integrate_linear_ivp, integrate_linear_ivp_from_right, solve_second_order_bvp,
};
use crate::operator::{interior_grid, LinearOperator, Tolerances};
use crate::oracle::{self, Oracle};
use crate::reduction::{solve_f_ode, verify_reduction_identity};
use crate::verdict::Status;

pub const DEFAULT_SEED: u64 = 20240611;

/// Failures listed per suite before truncation.
const MAX_LISTED: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    /// One representative point per case, in case order.
    pub witnesses: Vec<f64>,
    /// Worst-case measurements across the suite.
    pub metrics: BTreeMap<&'static str, f64>,
    #[serde(skip)]
    pub seconds: f64,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl Summary {
    pub fn passed(&self) -> usize {
        self.suites.iter().map(|s| s.passed).sum()
    }

    pub fn failed(&self) -> usize {
        self.suites.iter().map(|s| s.failed).sum()
    }

    pub fn ok(&self) -> bool {
        self.failed() == 0
    }
}

/// Outcome of a single case.
struct CaseResult {
    pass: bool,
    witness: f64,
    metrics: Vec<(&'static str, f64, Agg)>,
    message: String,
}

#[derive(Clone, Copy)]
enum Agg {
    Max,
    Min,
}

impl CaseResult {
    fn new(pass: bool, witness: f64) -> Self {
        Self {
            pass,
            witness,
            metrics: Vec::new(),
            message: String::new(),
        }
    }

    fn max(mut self, name: &'static str, v: f64) -> Self {
        self.metrics.push((name, v, Agg::Max));
        self
    }

    fn min(mut self, name: &'static str, v: f64) -> Self {
        self.metrics.push((name, v, Agg::Min));
        self
    }

    fn message(mut self, m: impl Into<String>) -> Self {
        self.message = m.into();
        self
    }
}

/// Independent stream for case `index` of suite `suite`.
pub fn case_rng(seed: u64, suite: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite << 32 | index as u64);
    rng
}

fn run_suite<F>(name: &'static str, suite: u64, seed: u64, count: usize, case: F) -> SuiteResult
where
    F: Fn(&mut ChaCha8Rng, usize) -> Result<CaseResult> + Sync,
{
    let start = Instant::now();
    let results: Vec<Result<CaseResult>> = (0..count)
        .into_par_iter()
        .map(|i| case(&mut case_rng(seed, suite, i), i))
        .collect();
    let mut out = SuiteResult {
        name,
        passed: 0,
        failed: 0,
        failures: Vec::new(),
        witnesses: Vec::with_capacity(count),
        metrics: BTreeMap::new(),
        seconds: 0.0,
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => {
                out.witnesses.push(c.witness);
                for (k, v, agg) in c.metrics {
                    let e = out.metrics.entry(k).or_insert(v);
                    *e = match agg {
                        Agg::Max => e.max(v),
                        Agg::Min => e.min(v),
                    };
                }
                if c.pass {
                    out.passed += 1;
                } else {
                    out.failed += 1;
                    if out.failures.len() < MAX_LISTED {
                        out.failures.push(format!("case {i}: {}", c.message));
                    }
                }
            }
            Err(e) => {
                out.witnesses.push(f64::NAN);
                out.failed += 1;
                if out.failures.len() < MAX_LISTED {
                    out.failures.push(format!("case {i}: error: {e}"));
                }
            }
        }
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

/// Random coefficient expression with `|a(x)| ≤ bound` on `[0, 1]`: either a
/// quadratic with `Σ|c_j| ≤ bound` or `A sin(ωx + φ)` with `|A| ≤ bound`.
pub fn random_coefficient(rng: &mut ChaCha8Rng, bound: f64) -> String {
    if rng.gen_bool(0.5) {
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..=1.0) * bound / 3.0).collect();
        format!("{} + {}*x + {}*x^2", literal(c[0]), literal(c[1]), literal(c[2]))
    } else {
        let amp = rng.gen_range(-1.0..=1.0) * bound;
        let w = rng.gen_range(0.0..6.0);
        let phase = rng.gen_range(0.0..6.3);
        format!("{}*sin({}*x + {})", literal(amp), literal(w), literal(phase))
    }
}

/// Random polynomial coefficient with `|a(x)| ≤ bound` on `[0, 1]`.
pub fn random_polynomial(rng: &mut ChaCha8Rng, bound: f64) -> String {
    let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..=1.0) * bound / 3.0).collect();
    format!("{} + {}*x + {}*x^2", literal(c[0]), literal(c[1]), literal(c[2]))
}

/// Random forcing `q ≥ 0`.
pub fn random_forcing(rng: &mut ChaCha8Rng, floor: f64) -> String {
    let d0 = floor + rng.gen_range(0.0..1.0);
    let d1 = rng.gen_range(0.0..1.0);
    format!("{} + {}*x^2", literal(d0), literal(d1))
}

pub fn random_operator(rng: &mut ChaCha8Rng, n: usize, bound: f64, a: f64, b: f64) -> Result<LinearOperator> {
    let c: Vec<String> = (0..n).map(|_| random_coefficient(rng, bound)).collect();
    LinearOperator::from_exprs(&c, a, b)
}

/// Reduction identity for n ∈ {3, 4, 5} with `per_order` polynomial
/// coefficient sets each.
pub fn reduction_suite(seed: u64, per_order: usize) -> SuiteResult {
    run_suite("reduction_identity", 1, seed, 3 * per_order, |rng, i| {
        let n = 3 + i / per_order;
        let c: Vec<String> = (0..n).map(|_| random_polynomial(rng, 2.0)).collect();
        let op = LinearOperator::from_exprs(&c, 0.0, 1.0)?;
        let step = solve_f_ode(&op, default_step(1.0))?;
        let (lo, hi) = step.span();
        let probes: Vec<Oracle> = ["1", "x", "x^2", "sin(x)", "exp(x)"]
            .iter()
            .map(|s| oracle::expr(s))
            .collect::<Result<_>>()?;
        let check = verify_reduction_identity(&step, &probes, &interior_grid(lo, hi, 256), 1e-6)?;
        Ok(CaseResult::new(check.pass, check.worst_point)
            .max("max_relative_residual", check.max_relative)
            .min("min_surviving_span", hi - lo)
            .message(format!("n = {n}, residual {} at x = {}", check.max_relative, check.worst_point)))
    })
}

/// Zero-jet IVPs with `L[u] = -q ≤ 0`; alternates left and right endpoints.
pub fn equivalent_suite(seed: u64, count: usize) -> SuiteResult {
    run_suite("equivalent_form", 2, seed, count, |rng, i| {
        let n = 2 + i % 3;
        let op = random_operator(rng, n, 2.0, 0.0, 1.0)?;
        let q = oracle::expr(&random_forcing(rng, 0.0))?;
        let h = default_step(1.0);
        let right = i % 2 == 1;
        let (u, endpoint) = if right {
            (integrate_linear_ivp_from_right(&op, Some(q), &vec![0.0; n], h)?.1, Endpoint::Right)
        } else {
            (Arc::new(integrate_linear_ivp(&op, Some(q), &vec![0.0; n], h)?).oracle(), Endpoint::Left)
        };
        let r = check_equivalent_form(&HopfProblem::new(op, u, endpoint))?;
        let item = r.conclusion_named("parity_sign");
        let margin = item.and_then(|c| c.margin).unwrap_or(f64::NAN);
        let witness = item.and_then(|c| c.witness).unwrap_or(f64::NAN);
        let pass = r.status == Status::Holds && margin >= -1e-9;
        Ok(CaseResult::new(pass, witness)
            .min("min_signed_margin", margin)
            .message(format!("n = {n}, right = {right}: {} (margin {margin})", r.status)))
    })
}

/// Second-order BVPs on intervals shorter than δ(C) with nonnegative data.
pub fn lemma_suite(seed: u64, count: usize) -> SuiteResult {
    run_suite("small_interval_max_principle", 3, seed, count, |rng, i| {
        let c_bound = [0.5, 1.0, 2.0, 5.0][i % 4];
        let delta = make_barrier(BarrierKind::SmallIntervalH, c_bound, Geometry::interval(0.0, 1.0))?.param("delta");
        let c = rng.gen_range(0.0..1.0);
        let d = c + delta * rng.gen_range(0.2..0.95);
        let coeffs: Vec<String> = (0..2)
            .map(|_| {
                let amp = rng.gen_range(-1.0..=1.0) * c_bound;
                format!("{}*sin({}*x + {})", literal(amp), literal(rng.gen_range(0.0..6.0)), literal(rng.gen_range(0.0..6.3)))
            })
            .collect();
        let op = LinearOperator::from_exprs(&coeffs, c, d)?.with_declared_bound(c_bound);
        let q = oracle::expr(&random_forcing(rng, 0.0))?;
        let (alpha, beta) = if i % 3 == 0 {
            (0.0, 0.0)
        } else {
            (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))
        };
        let g = Arc::new(solve_second_order_bvp(&op, Some(q), (c, alpha), (d, beta), (d - c) / 4096.0)?).oracle();
        let r = small_interval_max_principle(&op, &g, c, d, Tolerances::default(), 1024)?;
        let item = r.conclusion_named("nonnegative");
        let min = item.and_then(|i| i.value).unwrap_or(f64::NAN);
        let at = item.and_then(|i| i.witness).unwrap_or(f64::NAN);
        Ok(CaseResult::new(r.status == Status::Holds && min >= -1e-9, at)
            .min("min_g", min)
            .message(format!("C = {c_bound}, [{c}, {d}]: {} (min g = {min})", r.status)))
    })
}

/// Forward-constructed Hopf problems; `degenerate` extra cases use slope 0.
pub fn hopf_positivity_suite(seed: u64, count: usize, degenerate: usize) -> SuiteResult {
    run_suite("hopf_positivity", 4, seed, count + degenerate, |rng, i| {
        let n = 2 + i % 3;
        let s = if i < count { (1 + i % 10) as f64 / 10.0 } else { 0.0 };
        let op = random_operator(rng, n, 2.0, 0.0, 1.0)?;
        let q = oracle::expr(&random_forcing(rng, 0.0))?;
        let mut init = vec![0.0; n];
        init[n - 1] = s;
        let u = Arc::new(integrate_linear_ivp(&op, Some(q), &init, default_step(1.0))?).oracle();
        let p = HopfProblem::new(op, u, Endpoint::Left);
        let r = check_hopf_left(&p, Mode::Direct)?;
        let measured = r
            .conclusion_named("endpoint_derivative")
            .and_then(|c| c.value)
            .unwrap_or(f64::NAN);
        if s == 0.0 {
            return Ok(CaseResult::new(r.status != Status::Holds, 0.0)
                .message(format!("n = {n}, slope 0 returned {}", r.status)));
        }
        let err = (measured - s).abs();
        let witness = r
            .hypothesis_named("sequence_condition")
            .and_then(|c| c.witness)
            .unwrap_or(f64::NAN);
        Ok(CaseResult::new(r.status == Status::Holds && err <= 1e-9, witness)
            .max("max_slope_error", err)
            .message(format!("n = {n}, s = {s}: {} (measured {measured})", r.status)))
    })
}

/// Contact pairs for `K = z{n+2} + sin(z1) + z2`, n ∈ {2, 3, 4}.
pub fn comparison_suite(seed: u64, count: usize) -> SuiteResult {
    run_suite("comparison_pattern", 5, seed, count, |rng, i| {
        let n = 2 + i % 3;
        let k = Arc::new(NonlinearOperator::parse(&format!("z{} + sin(z1) + z2", n + 2), n)?);
        let init: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let q = oracle::expr(&random_forcing(rng, 0.5))?;
        let (x0, reach, h) = (0.0, 0.25, 0.25 / 2048.0);
        let (_, v) = solve_for_operator(&k, None, x0, &init, (reach, reach), h)?;
        let (_, u) = solve_for_operator(&k, Some(q), x0, &init, (reach, reach), h)?;
        let sp = compare_contact(&k, u.as_ref(), v.as_ref(), x0, reach, h, Tolerances::default())?;
        let delta = sp.delta.unwrap_or(0.0);
        let pass = sp.verdict.status == Status::Holds && delta >= 0.05 && sp.max_identity_residual <= 1e-8;
        Ok(CaseResult::new(pass, delta)
            .min("min_delta", delta)
            .max("max_identity_residual", sp.max_identity_residual)
            .message(format!(
                "n = {n}: {} (delta {delta}, residual {})",
                sp.verdict.status, sp.max_identity_residual
            )))
    })
}

/// Barrier sign certificates for C ∈ {0.5, 1, 5}, `per_bound` coefficient
/// draws each.
pub fn barrier_suite(seed: u64, per_bound: usize) -> SuiteResult {
    run_suite("barrier_certificates", 6, seed, 3 * per_bound, |rng, i| {
        let c = [0.5, 1.0, 5.0][i / per_bound];
        let op2 = random_operator(rng, 2, c, 0.0, 1.0)?;
        let op3 = random_operator(rng, 3, c, 0.0, 1.0)?;
        let x_i = 0.01 * rng.gen_range(0.1..=1.0);
        let mut margins = Vec::with_capacity(4);
        let plan = [
            (BarrierKind::SmallIntervalH, Geometry::interval(0.0, 1.0), &op2),
            (BarrierKind::ExpSubsolution, Geometry::interval(0.0, 1.0), &op2),
            (BarrierKind::ThirdOrderM, Geometry::interval(0.0, 1.0), &op3),
            (BarrierKind::SineHi, Geometry { a: 0.0, b: 1.0, x_i: Some(x_i) }, &op2),
        ];
        let mut worst = (f64::INFINITY, 0.0);
        for (kind, geometry, op) in plan {
            let b = make_barrier(kind, c, geometry)?;
            let cert = certify_sign(&b, op, &b.grid(CERT_GRID))?;
            if cert.margin < worst.0 {
                worst = (cert.margin, cert.worst_point);
            }
            margins.push(cert.margin);
        }
        let pass = margins.iter().all(|m| *m >= crate::barriers::CERT_MARGIN);
        Ok(CaseResult::new(pass, worst.1)
            .min("min_margin", worst.0)
            .message(format!("C = {c}: margins {margins:?}")))
    })
}

/// Zero data stays zero; the control run departs.
pub fn uniqueness_suite(seed: u64, count: usize) -> SuiteResult {
    run_suite("uniqueness", 7, seed, count, |rng, i| {
        let n = 2 + i % 3;
        let op = random_operator(rng, n, 2.0, 0.0, 1.0)?;
        let r = uniqueness_probe(&op, 1.0 / 1024.0, 1e-3)?;
        let margin = r
            .conclusion_named("control_departs")
            .and_then(|c| c.margin)
            .unwrap_or(f64::NAN);
        Ok(CaseResult::new(r.status == Status::Holds, margin)
            .min("min_control_margin", margin)
            .message(format!("n = {n}: {}", r.status)))
    })
}

/// Every gallery case against its expected verdict.
pub fn gallery_suite() -> SuiteResult {
    let cases = gallery::cases();
    run_suite("gallery", 0, 0, cases.len(), |_, i| {
        let (o, _) = gallery::run_case(&cases[i])?;
        Ok(CaseResult::new(o.matched, i as f64).message(format!(
            "{}: expected {}, got {}",
            o.id, o.expected, o.status
        )))
    })
}

pub fn run(seed: u64, gallery_only: bool) -> Summary {
    let mut suites = vec![gallery_suite()];
    if !gallery_only {
        suites.extend([
            reduction_suite(seed, 50),
            equivalent_suite(seed, 200),
            lemma_suite(seed, 100),
            hopf_positivity_suite(seed, 200, 30),
            comparison_suite(seed, 30),
            barrier_suite(seed, 50),
            uniqueness_suite(seed, 100),
        ]);
    }
    Summary { seed, suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_stable() {
        let a: f64 = case_rng(1, 2, 3).gen();
        let b: f64 = case_rng(1, 2, 3).gen();
        let c: f64 = case_rng(1, 2, 4).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn coefficients_respect_bound() {
        let mut rng = case_rng(9, 0, 0);
        for _ in 0..50 {
            let e = oracle::expr(&random_coefficient(&mut rng, 2.0)).unwrap();
            for k in 0..=20 {
                assert!(e.value(k as f64 / 20.0).unwrap().abs() <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn small_suites_pass() {
        for s in [
            reduction_suite(3, 2),
            equivalent_suite(3, 6),
            lemma_suite(3, 4),
            hopf_positivity_suite(3, 6, 3),
            comparison_suite(3, 3),
            barrier_suite(3, 2),
            uniqueness_suite(3, 3),
        ] {
            assert!(s.ok(), "{}: {:?}", s.name, s.failures);
        }
    }
}
