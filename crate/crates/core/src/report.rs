//! JSON run reports.
//!
//! A report is a pure function of the resolved problem except for
//! `generated_at`; [`Report::to_json_stable`] drops that field.

use serde::Serialize;

use crate::comparison::{CONTACT_LEVELS, CONTACT_POINTS};
use crate::expr::GRAMMAR_VERSION;
use crate::hopf::{BOUND_FLOOR, LIPSCHITZ_PAIRS, MIN_RADIUS_STEPS, SCAN_LEVELS, SCAN_POINTS};
use crate::odeint::BLOWUP_THRESHOLD;
use crate::operator::{Tolerances, BOUND_GRID, LADDER_DEPTH};
use crate::problem::ProblemFile;
use crate::quadrature::NODES;
use crate::verdict::{Status, VerdictReport};

pub const REPORT_SCHEMA: &str = "hopfkit-report-v1";

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for Tool {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub h: f64,
    pub grid: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub mode: Option<String>,
    pub quadrature_nodes: usize,
    pub blowup_threshold: f64,
    pub ladder_depth: u32,
    pub scan_levels: usize,
    pub scan_points: usize,
    pub contact_levels: usize,
    pub contact_points: usize,
    pub min_radius_steps: f64,
    pub bound_grid: usize,
    pub bound_floor: f64,
    pub lipschitz_pairs: usize,
}

impl Environment {
    pub fn for_problem(p: &ProblemFile) -> Self {
        Self {
            h: p.step_size(),
            grid: p.grid_size(),
            tolerances: p.tol(),
            seed: p.seed_value(),
            mode: p.mode.clone(),
            quadrature_nodes: NODES,
            blowup_threshold: BLOWUP_THRESHOLD,
            ladder_depth: LADDER_DEPTH,
            scan_levels: SCAN_LEVELS,
            scan_points: SCAN_POINTS,
            contact_levels: CONTACT_LEVELS,
            contact_points: CONTACT_POINTS,
            min_radius_steps: MIN_RADIUS_STEPS,
            bound_grid: BOUND_GRID,
            bound_floor: BOUND_FLOOR,
            lipschitz_pairs: LIPSCHITZ_PAIRS,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub grammar: &'static str,
    pub tool: Tool,
    /// The resolved problem; feeding it back to `run` reproduces the report.
    pub problem: ProblemFile,
    pub verdict: VerdictReport,
    pub environment: Environment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub generated_at: String,
}

impl Report {
    pub fn new(problem: &ProblemFile, verdict: VerdictReport) -> Self {
        let problem = problem.resolved();
        Self {
            schema: REPORT_SCHEMA,
            grammar: GRAMMAR_VERSION,
            tool: Tool::default(),
            environment: Environment::for_problem(&problem),
            problem,
            verdict,
            error: None,
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Report for a run that stopped on a numerical error.
    pub fn from_error(problem: &ProblemFile, err: &crate::Error) -> Self {
        let mut v = VerdictReport::new(problem_checker(problem));
        v.note(format!("run aborted: {err}"));
        let mut r = Self::new(problem, v);
        r.error = Some(err.to_string());
        r
    }

    pub fn status(&self) -> Status {
        self.verdict.status
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON without the timestamp.
    pub fn to_json_stable(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("generated_at");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

fn problem_checker(p: &ProblemFile) -> String {
    serde_json::to_value(p.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{execute, Kind, Source};

    fn parabola() -> ProblemFile {
        ProblemFile::new(Kind::HopfLeft, 2, (0.0, 1.0)).with_u(Source::Expr("x - x^2".into()))
    }

    #[test]
    fn stable_json_is_reproducible() {
        let p = parabola();
        let a = Report::new(&p, execute(&p).unwrap().report).to_json_stable();
        let b = Report::new(&p, execute(&p).unwrap().report).to_json_stable();
        assert_eq!(a, b);
        assert!(!a.contains("generated_at"));
    }

    #[test]
    fn echo_reruns_identically() {
        let p = parabola();
        let first = Report::new(&p, execute(&p).unwrap().report);
        let echoed = ProblemFile::from_json(&serde_json::to_string(&first.problem).unwrap()).unwrap();
        let second = Report::new(&echoed, execute(&echoed).unwrap().report);
        assert_eq!(first.to_json_stable(), second.to_json_stable());
        assert_eq!(first.status(), Status::Holds);
    }

    #[test]
    fn environment_records_settings() {
        let r = Report::new(&parabola(), VerdictReport::new("hopf_left"));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], REPORT_SCHEMA);
        assert_eq!(v["grammar"], "expr-v1");
        assert_eq!(v["environment"]["quadrature_nodes"], 16);
        assert_eq!(v["environment"]["h"], 1.0 / 4096.0);
        assert!(v["generated_at"].as_str().unwrap().ends_with('Z'));
    }
}
