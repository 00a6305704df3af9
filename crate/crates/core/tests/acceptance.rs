//! Acceptance gate. Each test prints one PASS/FAIL line with the measured
//! value and the pinned tolerance, then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use hopfkit::expr::{self, parse};
use hopfkit::gallery::{self, lambda_half, lambda_n, SharpExample};
use hopfkit::hopf::{check_equivalent_form, check_hopf, Mode};
use hopfkit::odeint::integrate_linear_ivp;
use hopfkit::operator::LinearOperator;
use hopfkit::oracle::{self, Oracle, Reflected};
use hopfkit::problem::{execute, hopf_problem, Kind};
use hopfkit::reduction::solve_f_ode;
use hopfkit::selftest::{self, Summary, SuiteResult, DEFAULT_SEED};
use hopfkit::verdict::Status;

fn line(id: u32, pass: bool, text: String) {
    let mark = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{mark} criterion {id:>2}: {text}");
}

struct Run {
    summary: Summary,
    seconds: f64,
}

fn selftest_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let summary = selftest::run(DEFAULT_SEED, false);
        Run {
            summary,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn suite(name: &str) -> &'static SuiteResult {
    selftest_run()
        .summary
        .suites
        .iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("suite {name} missing"))
}

fn metric(s: &SuiteResult, key: &str) -> f64 {
    s.metrics.get(key).copied().unwrap_or(f64::NAN)
}

#[test]
fn criterion_01_reduction_identity() {
    let s = suite("reduction_identity");
    let worst = metric(s, "max_relative_residual");
    let pass = s.ok() && s.passed == 150 && worst <= 1e-6 && s.seconds <= 10.0;
    line(
        1,
        pass,
        format!(
            "reduction identity, n = 3..5 x 50: {}/{} pass, max relative residual {worst:.2e} (tol 1e-6), {:.2}s (limit 10s)",
            s.passed,
            s.passed + s.failed,
            s.seconds
        ),
    );
    assert!(pass, "{:?}", s.failures);
}

#[test]
fn criterion_02_f_closed_form() {
    let h = 2f64.powi(-12);
    let op = LinearOperator::pure(3, 0.0, 0.9).unwrap();
    let step = solve_f_ode(&op, h).unwrap();
    let exact = |x: f64| (1.0 - x) / (1.0 - x + x * x / 2.0);
    let mut sup = 0.0f64;
    for i in 0..step.f.len() {
        let x = step.f.x(i);
        sup = sup.max((step.f.state(i)[0] - exact(x)).abs());
    }
    let span = step.span();
    let pass = sup <= 1e-7 && step.truncation().is_none() && (span.1 - 0.9).abs() < 1e-12;
    line(
        2,
        pass,
        format!("f-ODE for u''' on [0, 0.9] at h = 2^-12: sup error {sup:.2e} (tol 1e-7)"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_sharp_family() {
    let mut worst = 0.0f64;
    for (n, alpha) in [(3, 0.5), (4, 0.5), (3, 1.0 / 3.0)] {
        let ex = SharpExample::new(n, alpha).unwrap();
        let pts = SharpExample::sample_points(20);
        assert_eq!(pts.len(), 40);
        for x in pts {
            worst = worst.max(ex.identity_residual(x).unwrap());
        }
    }
    // (n!/(2n)!)^2 for n = 3 by direct factorials.
    let oracle_value = (6.0f64 / 720.0).powi(2);
    let lambda_rel = ((lambda_n(3, 0.5) - 1.0 / 14400.0) / (1.0 / 14400.0)).abs();
    let closed_rel = ((lambda_half(3) - oracle_value) / oracle_value).abs();
    let mut statuses = Vec::new();
    for id in [
        "sharp-3-half-left",
        "sharp-4-half-left",
        "sharp-3-third-left",
    ] {
        let case = gallery::find(id).unwrap();
        assert_eq!(case.problem.kind, Kind::HopfLeft);
        statuses.push(execute(&case.problem).unwrap().report.status);
    }
    let unmet = statuses.iter().all(|s| *s == Status::HypothesesUnmet);
    let pass = worst <= 1e-8 && lambda_rel <= 1e-14 && closed_rel <= 1e-14 && unmet;
    line(
        3,
        pass,
        format!(
            "sharp family: residual {worst:.2e} (tol 1e-8 rel, 40 points), lambda_3(1/2) rel err {lambda_rel:.1e} (tol 1e-14), hopf_left {statuses:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_barrier_certificates() {
    let s = suite("barrier_certificates");
    let margin = metric(s, "min_margin");
    let pass = s.ok() && s.passed == 150 && margin >= 1e-10 && s.seconds <= 10.0;
    line(
        4,
        pass,
        format!(
            "barriers, C in {{0.5, 1, 5}} x 50 x 4 certificates: {}/{} pass, min margin {margin:.3e} (floor 1e-10), {:.2}s (limit 10s)",
            s.passed,
            s.passed + s.failed,
            s.seconds
        ),
    );
    assert!(pass, "{:?}", s.failures);
}

#[test]
fn criterion_05_equivalent_form() {
    let s = suite("equivalent_form");
    let margin = metric(s, "min_signed_margin");
    let pass = s.ok() && s.passed == 200 && margin >= -1e-9;
    line(
        5,
        pass,
        format!(
            "equivalent form, 200 zero-jet IVPs: {}/{} parity-correct, min signed margin {margin:.3e} (tol -1e-9)",
            s.passed,
            s.passed + s.failed
        ),
    );
    assert!(pass, "{:?}", s.failures);
}

#[test]
fn criterion_06_small_interval_lemma() {
    let s = suite("small_interval_max_principle");
    let min_g = metric(s, "min_g");
    let mut g_ok = true;
    let mut g_mins = Vec::new();
    for i in [2u32, 8, 32] {
        let case = gallery::find(&format!("g-{i}")).unwrap();
        let r = execute(&case.problem).unwrap().report;
        let m = r.details["min_g"].as_f64().unwrap();
        let expected = -1.0 / (i * i) as f64;
        g_ok &= r.status == Status::NotApplicable && (m - expected).abs() <= 1e-12;
        g_mins.push(m);
    }
    let pass = s.ok() && s.passed == 100 && min_g >= -1e-9 && g_ok;
    line(
        6,
        pass,
        format!(
            "small-interval lemma, 100 BVPs: {}/{} pass, min g {min_g:.3e} (tol -1e-9); g_i minima {g_mins:?} (expect -1/i^2)",
            s.passed,
            s.passed + s.failed
        ),
    );
    assert!(pass, "{:?}", s.failures);
}

#[test]
fn criterion_07_hopf_positivity() {
    let s = suite("hopf_positivity");
    let err = metric(s, "max_slope_error");
    let pass = s.ok() && s.passed == 230 && err <= 1e-9;
    line(
        7,
        pass,
        format!(
            "hopf positivity, 200 slopes + 30 zero slopes: {}/{} pass, max |u^(n-1)(a) - s| {err:.2e} (tol 1e-9)",
            s.passed,
            s.passed + s.failed
        ),
    );
    assert!(pass, "{:?}", s.failures);
}

#[test]
fn criterion_08_comparison_patterns() {
    let s = suite("comparison_pattern");
    let delta = metric(s, "min_delta");
    let res = metric(s, "max_identity_residual");
    let pass = s.ok() && s.passed == 30 && delta >= 0.05 && res <= 1e-8;
    line(
        8,
        pass,
        format!(
            "comparison, n = 2..4: {}/{} pass, min radius {delta:.4} (floor 0.05), identity residual {res:.2e} (tol 1e-8)",
            s.passed,
            s.passed + s.failed
        ),
    );
    assert!(pass, "{:?}", s.failures);
}

fn double_reflection_error(u: &Oracle, pivot: f64, sign: f64, order: usize) -> f64 {
    let twice = Reflected::oracle(Reflected::oracle(u.clone(), pivot, sign), pivot, sign);
    let mut worst = 0.0f64;
    for k in 0..=16 {
        let x = 0.05 + 0.9 * k as f64 / 16.0;
        let a = u.jet(x, order).unwrap();
        let b = twice.jet(x, order).unwrap();
        for m in 0..=order {
            let scale = 1.0 + a.deriv(m).abs();
            worst = worst.max((a.deriv(m) - b.deriv(m)).abs() / scale);
        }
    }
    worst
}

#[test]
fn criterion_09_reflection_and_parity() {
    let mut worst = 0.0f64;
    let sources = ["x - x^2", "sin(3*x) + exp(-x)", "log(1 + x) * x^3"];
    for src in sources {
        let u = oracle::expr(src).unwrap();
        for (pivot, sign) in [(0.0, 1.0), (1.0, -1.0), (0.37, -1.0)] {
            worst = worst.max(double_reflection_error(&u, pivot, sign, 4));
        }
    }
    let op = LinearOperator::from_exprs(&["1 + x", "sin(x)", "-2"], 0.0, 1.0).unwrap();
    let traj = std::sync::Arc::new(
        integrate_linear_ivp(&op, Some(oracle::expr("1").unwrap()), &[0.0, 0.0, 0.5], 1.0 / 1024.0).unwrap(),
    );
    worst = worst.max(double_reflection_error(&traj.oracle(), 1.0, -1.0, 2));

    let mut checked = 0;
    let mut mismatches = Vec::new();
    for case in gallery::cases() {
        if !matches!(case.problem.kind, Kind::HopfLeft | Kind::HopfRight | Kind::Equivalent) {
            continue;
        }
        let direct = execute(&case.problem).unwrap().report.status;
        let mirrored = hopf_problem(&case.problem).unwrap().reflected().unwrap();
        let status = match case.problem.kind {
            Kind::Equivalent => check_equivalent_form(&mirrored).unwrap().status,
            _ => check_hopf(&mirrored, Mode::Direct).unwrap().status,
        };
        checked += 1;
        if status != direct {
            mismatches.push(format!("{}: {direct} vs mirrored {status}", case.id));
        }
    }
    let pass = worst <= 1e-12 && mismatches.is_empty() && checked >= 10;
    line(
        9,
        pass,
        format!(
            "double reflection max error {worst:.1e} (tol 1e-12); {checked} endpoint gallery cases, mirrored verdict mismatches {mismatches:?}"
        ),
    );
    assert!(pass);
}

const JET_CORPUS: [&str; 10] = [
    "x^3 - 2*x + 1",
    "sin(x) * cos(2*x)",
    "exp(-x^2)",
    "log(1 + x^2)",
    "1 / (1 + x^2)",
    "abs(x - 5) * x",
    "pow(x + 2, 0.5)",
    "x^-2 + x^(1/3)",
    "exp(sin(x)) / (2 + cos(x))",
    "(x - 1/8)^2 - 1/64",
];

/// Worst relative gap between jet derivative k and a central difference of
/// jet derivative k - 1, k = 1..4.
fn jet_vs_differences() -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for src in JET_CORPUS {
        let u = oracle::expr(src).unwrap();
        for x in [0.3, 0.7, 1.3, 2.2] {
            let j = u.jet(x, 4).unwrap();
            let jp = u.jet(x + h, 3).unwrap();
            let jm = u.jet(x - h, 3).unwrap();
            for k in 1..=4 {
                let fd = (jp.deriv(k - 1) - jm.deriv(k - 1)) / (2.0 * h);
                let ad = j.deriv(k);
                worst = worst.max((ad - fd).abs() / ad.abs().max(1.0));
            }
        }
    }
    worst
}

#[test]
fn criterion_10_jets_parser_selftest() {
    let jet_gap = jet_vs_differences();
    let mut round_trip = true;
    for src in JET_CORPUS.iter().copied().chain(["-x^2", "2^3^2", "-(x + 1) * 3", "pow(abs(z1), 0.5) + z2"]) {
        let first = parse(src).unwrap();
        let printed = first.to_string();
        let second = parse(&printed).unwrap();
        round_trip &= first == second && second.to_string() == printed;
    }
    let run = selftest_run();
    let s = &run.summary;
    let pass = jet_gap <= 1e-6 && round_trip && s.ok() && run.seconds < 60.0;
    line(
        10,
        pass,
        format!(
            "jets vs central differences {jet_gap:.1e} (tol 1e-6 rel, 10 expressions); {} round trip {}; selftest seed {} {} passed {} failed in {:.1}s (limit 60s)",
            expr::GRAMMAR_VERSION,
            if round_trip { "fixed" } else { "BROKEN" },
            s.seed,
            s.passed(),
            s.failed(),
            run.seconds
        ),
    );
    assert!(pass);
}
