//! Reduction of order: `v = f·u + u'` turns `L_{k+1}[u]` into `M_k[v]` when
//! `f` solves a k-th order nonlinear ODE built from the coefficients of L.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::{binomial, Jet};
use crate::odeint::{integrate_nonlinear_ivp, Rhs, Trajectory, Truncation};
use crate::operator::{
    detect_sequence_condition, endpoint_jet_check, JetCheckItem, LadderPoint, LinearOperator,
    SequenceStatus, Side, Tolerances,
};
use crate::oracle::{FnOracle, Oracle};

/// Smallest surviving f-span, in steps, for a single reduction.
pub const MIN_STEP_SPAN: f64 = 8.0;

/// Smallest surviving span, in steps, anywhere in a chain.
pub const MIN_CHAIN_SPAN: f64 = 16.0;

/// Induced coefficients `b_0..b_{k-1}` from `a = [a_1, ..., a_k]` and
/// `f = [f, f', ..., f^(k-1)]` at one point, via
/// `b_{j-1} = a_j - C(k,j) f^(k-j) - Σ_{m=j}^{k-1} b_m C(m,j) f^(m-j)`.
pub fn b_from_f(a: &[f64], f: &[f64]) -> Vec<f64> {
    let k = a.len();
    assert_eq!(f.len(), k, "need k values of a and k derivatives of f");
    let mut b = vec![0.0; k];
    for j in (1..=k).rev() {
        let mut acc = a[j - 1] - binomial(k, j) * f[k - j];
        for m in j..k {
            acc -= b[m] * binomial(m, j) * f[m - j];
        }
        b[j - 1] = acc;
    }
    b
}

/// Right-hand side of the f-equation: `f^(k) = a_0 - Σ_{m=1}^{k-1} b_m f^(m) - b_0 f`.
pub fn f_top(a0: f64, b: &[f64], f: &[f64]) -> f64 {
    let mut acc = a0 - b[0] * f[0];
    for m in 1..b.len() {
        acc -= b[m] * f[m];
    }
    acc
}

/// Coefficients `a_0..a_k` of `L` reproduced from `b` and a full f-jet
/// `[f, ..., f^(k)]` by expanding `M[f·u + u']`.
pub fn matched_coefficients(b: &[f64], f: &[f64]) -> Vec<f64> {
    let k = b.len();
    assert_eq!(f.len(), k + 1);
    let bm = |m: usize| if m == k { 1.0 } else { b[m] };
    let mut a = vec![0.0; k + 1];
    a[0] = (0..=k).map(|m| bm(m) * f[m]).sum();
    for j in 1..=k {
        a[j] = bm(j - 1) + (j..=k).map(|m| bm(m) * binomial(m, j) * f[m - j]).sum::<f64>();
    }
    a
}

#[derive(Clone)]
pub struct ReductionStep {
    pub source: LinearOperator,
    pub f: Arc<Trajectory>,
    pub f_oracle: Oracle,
    /// `M_k` on the surviving span with trajectory-backed `b_i`.
    pub reduced: LinearOperator,
    pub level: usize,
}

impl std::fmt::Debug for ReductionStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReductionStep")
            .field("level", &self.level)
            .field("source_order", &self.source.order())
            .field("span", &self.reduced.interval())
            .field("f", &self.f)
            .finish()
    }
}

impl ReductionStep {
    /// Order of the reduced operator.
    pub fn k(&self) -> usize {
        self.reduced.order()
    }

    pub fn span(&self) -> (f64, f64) {
        self.reduced.interval()
    }

    pub fn truncation(&self) -> Option<Truncation> {
        self.f.truncation()
    }

    pub fn b_values(&self, x: f64) -> Result<Vec<f64>> {
        self.reduced.coefficient_values(x)
    }

    /// `v = f·u + u'` for this step's f.
    pub fn push(&self, u: Oracle) -> Oracle {
        push_v(u, self.f_oracle.clone())
    }
}

fn source_values(coeffs: &[Oracle], x: f64) -> Result<Vec<f64>> {
    coeffs.iter().map(|c| c.value(x)).collect()
}

/// Integrates the f-equation of `source` (order k+1) from `f(a) = 1`,
/// `f'(a) = ... = f^(k-1)(a) = 0` with step `h`.
pub fn solve_f_ode(source: &LinearOperator, h: f64) -> Result<ReductionStep> {
    solve_f_ode_level(source, h, 0)
}

fn solve_f_ode_level(source: &LinearOperator, h: f64, level: usize) -> Result<ReductionStep> {
    let k = source
        .order()
        .checked_sub(1)
        .filter(|k| *k >= 2)
        .ok_or_else(|| {
            Error::Reduction(format!(
                "source operator must have order at least 3, got {}",
                source.order()
            ))
        })?;
    let (a, b) = source.interval();
    let coeffs: Vec<Oracle> = source.coefficients().to_vec();
    let rhs_coeffs = coeffs.clone();
    let rhs: Rhs = Arc::new(move |x, f| {
        let a = source_values(&rhs_coeffs, x)?;
        let bs = b_from_f(&a[1..], f);
        Ok(f_top(a[0], &bs, f))
    });
    let mut init = vec![0.0; k];
    init[0] = 1.0;
    let traj = match integrate_nonlinear_ivp(rhs, &init, (a, b), h) {
        Ok(t) => Arc::new(t),
        Err(Error::BlowUp { .. }) => {
            return Err(Error::Reduction(format!(
                "f blew up within the first step at level {level}"
            )))
        }
        Err(e) => return Err(e),
    };
    let end = traj.end();
    if end - a < MIN_STEP_SPAN * traj.step() {
        return Err(Error::Reduction(format!(
            "f survives only on [{a}, {end}], fewer than {MIN_STEP_SPAN} steps"
        )));
    }
    let f_oracle = traj.oracle();
    let b_oracles = (0..k)
        .map(|m| {
            let traj = Arc::clone(&traj);
            let coeffs = coeffs.clone();
            FnOracle::new(format!("b_{m}[level {level}]"), move |x, order| {
                let s = traj.state_at(x)?;
                let a = source_values(&coeffs, x)?;
                let bs = b_from_f(&a[1..], &s);
                let mut j = Jet::zero(x, order);
                j = j.add_scalar(bs[m])?;
                Ok(j)
            })
            .with_max_order(0)
            .into_oracle()
        })
        .collect();
    let reduced = LinearOperator::new_lazy(b_oracles, a, end)?;
    Ok(ReductionStep {
        source: source.clone(),
        f: traj,
        f_oracle,
        reduced,
        level,
    })
}

/// `v = f·u + u'`; jets of order m need order m+1 from u and order m from f.
pub fn push_v(u: Oracle, f: Oracle) -> Oracle {
    let max = f.max_order().min(u.max_order().saturating_sub(1));
    let label = format!("({})*({}) + d/dx({})", f.describe(), u.describe(), u.describe());
    FnOracle::new(label, move |x, m| {
        let uj = u.jet(x, m + 1)?;
        let fj = f.jet(x, m)?;
        Ok(fj.mul(&uj.truncate(m))?.add(&uj.derivative()?)?)
    })
    .with_max_order(max)
    .into_oracle()
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    /// Max over probes and grid of `|L[u] - M[v]| / (1 + |L[u]|)`.
    pub max_relative: f64,
    /// Max of `|L[u] - M[v]|`.
    pub max_abs: f64,
    /// Max of `|L[u]|`.
    pub max_lu: f64,
    pub worst_point: f64,
    pub worst_probe: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `L_{k+1}[u] = M_k[f·u + u']` on the grid for every probe.
pub fn verify_reduction_identity(
    step: &ReductionStep,
    probes: &[Oracle],
    grid: &[f64],
    tol: f64,
) -> Result<IdentityCheck> {
    let pushed: Vec<Oracle> = probes.iter().map(|u| step.push(u.clone())).collect();
    let (n, k) = (step.source.order(), step.k());
    let per_point = grid
        .par_iter()
        .map(|&x| -> Result<Vec<(f64, f64, f64, usize)>> {
            let a = step.source.coefficient_values(x)?;
            let b = step.reduced.coefficient_values(x)?;
            probes
                .iter()
                .zip(&pushed)
                .enumerate()
                .map(|(pi, (u, v))| {
                    let uj = u.jet(x, n)?;
                    let vj = v.jet(x, k)?;
                    let lu = uj.deriv(n) + a.iter().enumerate().map(|(i, c)| c * uj.deriv(i)).sum::<f64>();
                    let mv = vj.deriv(k) + b.iter().enumerate().map(|(i, c)| c * vj.deriv(i)).sum::<f64>();
                    Ok(((lu - mv).abs(), lu.abs(), x, pi))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = IdentityCheck {
        max_relative: 0.0,
        max_abs: 0.0,
        max_lu: 0.0,
        worst_point: grid.first().copied().unwrap_or(f64::NAN),
        worst_probe: 0,
        tol,
        pass: true,
    };
    for (res, lu, x, pi) in per_point.into_iter().flatten() {
        let rel = res / (1.0 + lu);
        if rel > out.max_relative {
            out.max_relative = rel;
            out.worst_point = x;
            out.worst_probe = pi;
        }
        out.max_abs = out.max_abs.max(res);
        out.max_lu = out.max_lu.max(lu);
    }
    out.pass = out.max_relative <= tol;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub level: usize,
    pub source_order: usize,
    pub reduced_order: usize,
    pub span: (f64, f64),
    pub h: f64,
    pub f_end: Vec<f64>,
    pub f_truncated: bool,
    pub b_at_a: Vec<f64>,
    /// `v^(i)(a)` for `i = 0..k-2`, each required to vanish.
    pub v_zero_jet: Vec<JetCheckItem>,
    /// `v^(k-1)(a)`.
    pub v_top: f64,
    /// `u^(k)(a)` of the function being reduced.
    pub u_top: f64,
    pub witness: Option<LadderPoint>,
    pub sequence: SequenceStatus,
}

#[derive(Clone)]
pub struct Chain {
    pub steps: Vec<ReductionStep>,
    pub stages: Vec<StageRecord>,
    /// `u, v_1, v_2, ...`; the last one solves the final second-order inequality.
    pub functions: Vec<Oracle>,
}

impl Chain {
    pub fn final_operator(&self) -> &LinearOperator {
        &self.steps.last().expect("non-empty chain").reduced
    }

    pub fn final_function(&self) -> &Oracle {
        self.functions.last().expect("non-empty chain")
    }

    /// True when every stage found a positivity witness.
    pub fn witnesses_complete(&self) -> bool {
        self.stages.iter().all(|s| s.witness.is_some())
    }
}

/// Reduces `op` (order n ≥ 3) down to order 2 at its left endpoint, pushing
/// `u` through each stage. Level ℓ integrates with step `h·2^ℓ` on a span
/// aligned with the previous level's nodes.
pub fn reduce_chain(op: &LinearOperator, u: Oracle, h: f64, tol: Tolerances) -> Result<Chain> {
    let n = op.order();
    if n < 3 {
        return Err(Error::Reduction(format!("chain needs order at least 3, got {n}")));
    }
    let (a, b) = op.interval();
    let steps0 = ((b - a) / h - 1e-9).ceil().max(1.0);
    let h0 = (b - a) / steps0;
    let mut current = op.clone();
    let mut current_u = u.clone();
    let mut steps = Vec::new();
    let mut stages = Vec::new();
    let mut functions = vec![u];
    for level in 0..n - 2 {
        let hl = h0 * (1u64 << level) as f64;
        let (_, end) = current.interval();
        let cells = ((end - a) / hl + 1e-9).floor();
        if cells < MIN_CHAIN_SPAN {
            return Err(Error::Reduction(format!(
                "span collapsed to [{a}, {end}] at level {level}, below {MIN_CHAIN_SPAN} steps of {hl}"
            )));
        }
        let source = current.restricted(a, a + cells * hl)?;
        let step = solve_f_ode_level(&source, hl, level)?;
        let (_, new_end) = step.span();
        if new_end - a < MIN_CHAIN_SPAN * hl {
            return Err(Error::Reduction(format!(
                "span collapsed to [{a}, {new_end}] at level {level}"
            )));
        }
        let k = step.k();
        let v = step.push(current_u.clone());
        let uj = current_u.jet(a, k)?;
        let zero = endpoint_jet_check(v.as_ref(), a, Side::Right, k, tol.equality)?;
        let seq = detect_sequence_condition(v.as_ref(), a, Side::Right, new_end - a, 1.0, tol.positivity)?;
        stages.push(StageRecord {
            level,
            source_order: source.order(),
            reduced_order: k,
            span: (a, new_end),
            h: step.f.step(),
            f_end: step.f.last_state().to_vec(),
            f_truncated: step.truncation().is_some(),
            b_at_a: step.b_values(a)?,
            v_zero_jet: zero.items.clone(),
            v_top: zero.top,
            u_top: uj.deriv(k),
            witness: if seq.status == SequenceStatus::Pass {
                seq.deepest_witness().cloned()
            } else {
                None
            },
            sequence: seq.status,
        });
        current = step.reduced.clone();
        current_u = v.clone();
        functions.push(v);
        steps.push(step);
    }
    Ok(Chain {
        steps,
        stages,
        functions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::interior_grid;
    use crate::oracle::{constant, expr};

    fn closed_form_f(x: f64) -> f64 {
        (1.0 - x) / (1.0 - x + 0.5 * x * x)
    }

    #[test]
    fn recurrence_examples() {
        assert_eq!(b_from_f(&[0.0, 0.0], &[1.0, 0.0]), vec![1.0, -1.0]);
        assert_eq!(b_from_f(&[0.0, 3.0], &[1.0, 0.0]), vec![-2.0, 2.0]);
        assert_eq!(b_from_f(&[0.0; 4], &[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn f_equation_for_k2_zero_coefficients() {
        let f = [0.7, -0.3];
        let b = b_from_f(&[0.0, 0.0], &f);
        let top = f_top(0.0, &b, &f);
        assert!((top - (3.0 * f[0] * f[1] - f[0].powi(3))).abs() < 1e-15);
    }

    #[test]
    fn matching_reproduces_coefficients() {
        let a = [0.3, -1.2, 0.8, 1.7];
        let f = [1.1, 0.4, -0.6];
        let b = b_from_f(&a[1..], &f);
        let mut full = f.to_vec();
        full.push(f_top(a[0], &b, &f));
        let back = matched_coefficients(&b, &full);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_k2() {
        let op = LinearOperator::pure(3, 0.0, 0.9).unwrap();
        let step = solve_f_ode(&op, 0.9 / 4096.0).unwrap();
        assert_eq!(step.b_values(0.0).unwrap(), vec![1.0, -1.0]);
        for i in 0..step.f.len() {
            let x = step.f.x(i);
            assert!((step.f.state(i)[0] - closed_form_f(x)).abs() < 1e-7);
        }
        let op = LinearOperator::pure(3, 0.0, 1.0).unwrap();
        let step = solve_f_ode(&op, 1.0 / 4096.0).unwrap();
        assert!(step.f.last_state()[0].abs() < 1e-6);
    }

    #[test]
    fn push_examples() {
        let v = push_v(expr("x^2").unwrap(), constant(1.0));
        let j = v.jet(0.0, 1).unwrap();
        assert_eq!(j.derivs(), &[0.0, 2.0]);
        let v = push_v(expr("sin(x)").unwrap(), constant(0.0));
        assert_eq!(v.value(0.4).unwrap(), 0.4f64.cos());
    }

    #[test]
    fn identity_for_kernel_probe() {
        let op = LinearOperator::pure(3, 0.0, 0.9).unwrap();
        let step = solve_f_ode(&op, 0.9 / 4096.0).unwrap();
        let grid = interior_grid(0.0, 0.9, 200);
        let r = verify_reduction_identity(&step, &[expr("x^2").unwrap()], &grid, 1e-7).unwrap();
        assert!(r.pass);
        assert!(r.max_abs < 1e-7);
        let r = verify_reduction_identity(&step, &[constant(0.0)], &grid, 0.0).unwrap();
        assert_eq!(r.max_abs, 0.0);
    }

    #[test]
    fn chain_slopes() {
        let tol = Tolerances::default();
        let op = LinearOperator::pure(3, 0.0, 1.0).unwrap();
        let c = reduce_chain(&op, expr("x^2 - x^4").unwrap(), 1.0 / 4096.0, tol).unwrap();
        assert_eq!(c.stages.len(), 1);
        assert_eq!(c.stages[0].v_top, 2.0);
        assert!(c.witnesses_complete());
        let op = LinearOperator::pure(4, 0.0, 1.0).unwrap();
        let c = reduce_chain(&op, expr("x^3 - x^5").unwrap(), 1.0 / 4096.0, tol).unwrap();
        assert_eq!(c.stages.len(), 2);
        assert_eq!(c.stages[1].v_top, 6.0);
        assert_eq!(c.final_operator().order(), 2);
        let c = reduce_chain(&op, constant(0.0), 1.0 / 4096.0, tol).unwrap();
        assert!(c.stages.iter().all(|s| s.witness.is_none()));
    }
}
