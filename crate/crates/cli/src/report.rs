//! Run reports: one row per executed check, JSON with stable field names and
//! a plain-text table.

use std::fmt::Write as _;

use serde::Serialize;

use weakinv_core::invariance::ReportSummary;
use weakinv_core::ResidualStats;

pub const CERTIFICATION_NOTE: &str = "residuals are certified at the sampled points only; nothing here is a proof";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not applicable to this scenario; the reason is in `detail`.
    Skipped,
    /// Recorded without a pass/fail threshold.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub status: Status,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub count: Option<usize>,
    pub tolerance: Option<f64>,
    pub detail: Option<String>,
}

impl CheckRow {
    /// Passes when `stats.max < tol`.
    pub fn stats(name: &str, stats: ResidualStats, tol: f64) -> Self {
        Self {
            name: name.into(),
            status: if stats.passes(tol) { Status::Pass } else { Status::Fail },
            max: Some(stats.max),
            mean: Some(stats.mean),
            count: Some(stats.count),
            tolerance: Some(tol),
            detail: None,
        }
    }

    pub fn value(name: &str, value: f64, tol: f64) -> Self {
        Self::stats(name, ResidualStats::from_values([value]), tol)
    }

    pub fn info(name: &str, stats: ResidualStats) -> Self {
        Self {
            status: Status::Info,
            tolerance: None,
            ..Self::stats(name, stats, f64::INFINITY)
        }
    }

    pub fn flag(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            max: None,
            mean: None,
            count: None,
            tolerance: None,
            detail: Some(detail.into()),
        }
    }

    pub fn skipped(name: &str, reason: impl Into<String>) -> Self {
        Self {
            status: Status::Skipped,
            ..Self::flag(name, true, reason)
        }
    }

    /// An error inside one check fails that row instead of the whole run.
    pub fn error(name: &str, err: impl std::fmt::Display) -> Self {
        Self::flag(name, false, format!("error: {err}"))
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Terminal state of `decompose`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposeSummary {
    pub t: f64,
    pub y0: Vec<f64>,
    pub g0: Vec<f64>,
    pub y_final: Vec<f64>,
    pub g_final: Vec<f64>,
    pub p_cascade: Vec<f64>,
    pub p_direct: Vec<f64>,
    pub deviation: f64,
    pub rows: usize,
    /// `D` of a group-affine field, as given.
    pub derivation: Option<Vec<f64>>,
    /// `U` recovered by the group-affine decomposition.
    pub u: Option<Vec<f64>>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub scenario: String,
    pub source: String,
    pub seed: u64,
    pub note: &'static str,
    pub classification: Option<String>,
    pub checks: Vec<CheckRow>,
    pub invariance: Option<ReportSummary>,
    pub decompose: Option<DecomposeSummary>,
}

impl RunReport {
    pub fn new(command: &str, scenario: &crate::Scenario) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.name.clone(),
            source: scenario.source.clone(),
            seed: scenario.plan.seed,
            note: CERTIFICATION_NOTE,
            classification: None,
            checks: Vec::new(),
            invariance: None,
            decompose: None,
        }
    }

    pub fn push(&mut self, row: CheckRow) {
        debug_assert!(self.checks.iter().all(|r| r.name != row.name), "duplicate check {}", row.name);
        self.checks.push(row);
    }

    pub fn check(&self, name: &str) -> Option<&CheckRow> {
        self.checks.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|r| r.status == Status::Fail).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} (seed {})", self.command, self.scenario, self.seed);
        if let Some(c) = &self.classification {
            let _ = writeln!(out, "classification: {c}");
        }
        let width = self.checks.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let _ = writeln!(out, "{:width$}  {:7}  {:>10}  {:>10}  detail", "check", "status", "max", "tol");
        for r in &self.checks {
            let status = match r.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Skipped => "skipped",
                Status::Info => "info",
            };
            let num = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
            let _ = writeln!(
                out,
                "{:width$}  {:7}  {:>10}  {:>10}  {}",
                r.name,
                status,
                num(r.max),
                num(r.tolerance),
                r.detail.as_deref().unwrap_or("")
            );
        }
        if let Some(d) = &self.decompose {
            let _ = writeln!(out, "terminal deviation at t = {}: {:.3e}", d.t, d.deviation);
            if let Some(dm) = &d.derivation {
                let _ = writeln!(out, "D = {dm:?}");
            }
            if let Some(u) = &d.u {
                let _ = writeln!(out, "U = {u:?}");
            }
            for f in &d.files {
                let _ = writeln!(out, "wrote {f}");
            }
        }
        let _ = writeln!(out, "note: {}", self.note);
        out
    }
}
