//! The commands: classify, verify, decompose, list.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;

use weakinv_core::actions::ActionKind;
use weakinv_core::cascade::{
    as_group_field, cascade_trajectory, check_group_affine, check_well_definedness, group_affine_decompose,
    reconstruct, write_cascade_csv, BundleChart, CascadeSystem, QuotientPoint,
};
use weakinv_core::flows::{
    check_flow_derivative, check_flow_weak_invariance, check_sigma_is_flow, check_small_time_extension,
    write_trajectory_csv, FlowHandle, IntegratorConfig, Scheme, SigmaFromFlow,
};
use weakinv_core::invariance::{check_automorphism, classify_vector_field, Classification, InvarianceReport};
use weakinv_core::lie::matrix::flatten_row_major;
use weakinv_core::lie::{check_group_linear, GroupElement, VectorFieldG};
use weakinv_core::{ResidualStats, Tolerances};

use crate::report::{CheckRow, DecomposeSummary, RunReport};
use crate::scenario::{self, Scenario};

/// Times at which the flow relation is checked.
pub const FLOW_TIMES: [f64; 3] = [0.1, 0.5, 1.0];
/// `t` of the recovered `σ_t` checked for being an automorphism.
pub const SIGMA_TIME: f64 = 0.1;
pub const SIGMA_PAIRS: [(f64, f64); 4] = [(0.1, 0.1), (0.1, 0.2), (0.2, 0.1), (0.2, 0.2)];
pub const SMALL_TIME_DELTA: f64 = 0.05;
pub const SMALL_TIME_STEPS: usize = 8;
/// Points per chart for the chart invariants.
pub const CHART_POINTS: usize = 100;
/// Round trip and `dπ ∘ ds = id` tolerance of charts.
pub const CHART_TOL: f64 = 1e-8;

/// Exit code of `verify` and `decompose` when some check fails.
pub const EXIT_CHECK_FAILED: u8 = 4;

/// Command-line overrides applied on top of the scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tolerances: Vec<(String, f64)>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(seed) = self.seed {
            s.plan.seed = seed;
        }
        for (name, value) in &self.tolerances {
            s.tolerances.set(name, *value).with_context(|| format!("--tol {name}={value}"))?;
        }
        Ok(())
    }
}

pub fn classify_exit_code(c: Classification) -> u8 {
    match c {
        Classification::Strong | Classification::Weak => 0,
        Classification::PartialOnly => 2,
        Classification::None => 3,
    }
}

fn tolerance_for(name: &str, tol: &Tolerances) -> Option<f64> {
    Some(match name {
        "action_identity" | "action_compatibility" => tol.action_axioms,
        "strong_residual" | "strong_xi_norm" => tol.strong,
        "weak_consistency" | "orbit_tangency" | "w_uniqueness" => tol.weak,
        "group_linear" => tol.group_linear,
        _ => return None,
    })
}

fn run_classification(s: &Scenario) -> Result<InvarianceReport> {
    classify_vector_field(&s.field, &s.action, &s.plan, &s.tolerances)
        .with_context(|| format!("classifying {}", s.name))
}

/// Classification with one row per recorded statistic.
pub fn classify(s: &Scenario) -> Result<(RunReport, Classification)> {
    let inv = run_classification(s)?;
    let mut report = RunReport::new("classify", s);
    report.classification = Some(inv.classification.to_string());
    for (name, stats) in &inv.stats {
        report.push(match tolerance_for(name, &s.tolerances) {
            Some(t) => CheckRow::stats(name, *stats, t),
            None => CheckRow::info(name, *stats),
        });
    }
    report.invariance = Some(inv.summary());
    Ok((report, inv.classification))
}

/// `W` used downstream of classification: zero when Strong, the scenario's
/// derivation or the recovered field when Weak, times the scenario's scale.
fn select_w(s: &Scenario, inv: &InvarianceReport) -> Result<Option<VectorFieldG>> {
    let group = s.action.group();
    let w = match inv.classification {
        Classification::Strong => VectorFieldG::zero(group),
        Classification::Weak => match s.w.as_ref().and_then(|o| o.d.clone()) {
            Some(d) => VectorFieldG::inner_derivation(group, d)?,
            None => inv
                .recovered_w
                .clone()
                .context("Weak classification without a recovered W")?,
        },
        _ => return Ok(None),
    };
    Ok(Some(match s.w.as_ref().map(|o| o.scale) {
        Some(k) if k != 1.0 => w.scaled(k),
        _ => w,
    }))
}

fn row(name: &str, f: impl FnOnce() -> Result<CheckRow>) -> CheckRow {
    f().unwrap_or_else(|e| CheckRow::error(name, format!("{e:#}")))
}

fn w_config(s: &Scenario) -> IntegratorConfig {
    let base = IntegratorConfig::group_default().with_step(s.integrator.step);
    if s.integrator.scheme == Scheme::LieEulerExp {
        IntegratorConfig {
            scheme: Scheme::LieEulerExp,
            ..base
        }
    } else {
        base
    }
}

fn max_over<T>(items: &[T], f: impl Fn(&T) -> Result<f64>) -> Result<ResidualStats> {
    let values: Result<Vec<f64>> = items.iter().map(f).collect();
    Ok(ResidualStats::from_values(values?))
}

/// The property battery: preconditions, the six weak-invariance properties,
/// Strong-only rows, the group-affine rows for left actions and the cascade
/// rows for scenarios with a chart. Rows that do not apply are reported as
/// skipped.
pub fn verify(s: &Scenario) -> Result<RunReport> {
    let inv = run_classification(s)?;
    let tol = &s.tolerances;
    let plan = &s.plan;
    let mut report = RunReport::new("verify", s);
    report.classification = Some(inv.classification.to_string());

    let axioms = [inv.stat("action_identity"), inv.stat("action_compatibility")]
        .into_iter()
        .flatten()
        .fold(ResidualStats::EMPTY, |a, b| a.merge(&b));
    report.push(CheckRow::stats("action_axioms", axioms, tol.action_axioms));
    let invariant = matches!(inv.classification, Classification::Strong | Classification::Weak);
    report.push(CheckRow::flag(
        "classification",
        invariant,
        format!("{} under {}", inv.classification, s.action.name()),
    ));

    let vflow = FlowHandle::new(s.field.clone(), s.integrator)?;
    let w = select_w(s, &inv)?;
    let property_names = [
        "w_group_linear",
        "flow_weak_invariance",
        "flow_derivative",
        "sigma_automorphism",
        "sigma_flow",
        "small_time",
    ];
    match &w {
        None => {
            for name in property_names {
                report.push(CheckRow::skipped(name, format!("needs a Weak or Strong field, got {}", inv.classification)));
            }
        }
        Some(w) => {
            let wflow = FlowHandle::new(w.clone(), w_config(s))?;
            let action = &s.action;
            report.push(row("w_group_linear", || {
                Ok(CheckRow::stats("w_group_linear", check_group_linear(w, plan)?, tol.group_linear))
            }));
            report.push(row("flow_weak_invariance", || {
                let stats = check_flow_weak_invariance(&vflow, &wflow, action, &FLOW_TIMES, plan)?;
                Ok(CheckRow::stats("flow_weak_invariance", stats, tol.flow_invariance)
                    .with_detail(format!("t in {FLOW_TIMES:?}")))
            }));
            report.push(row("flow_derivative", || {
                let d = check_flow_derivative(&vflow, &wflow, action, plan)?;
                Ok(CheckRow::stats("flow_derivative", d.sides.merge(&d.analytic), tol.derivative)
                    .with_detail(format!("sides {:.3e}, analytic {:.3e}", d.sides.max, d.analytic.max)))
            }));
            let sigma = SigmaFromFlow::new(&vflow, action, plan)?;
            report.push(row("sigma_automorphism", || {
                let a = check_automorphism(&sigma.group_map(SIGMA_TIME), plan)?;
                let all = a.homomorphism.merge(&a.inversion).merge(&ResidualStats::from_values([a.identity]));
                Ok(CheckRow::stats("sigma_automorphism", all, tol.automorphism).with_detail(format!(
                    "t = {SIGMA_TIME}: homomorphism {:.3e}, identity {:.3e}, inversion {:.3e}",
                    a.homomorphism.max, a.identity, a.inversion.max
                )))
            }));
            report.push(row("sigma_flow", || {
                let f = check_sigma_is_flow(|t, g| sigma.at(t, g), action.group(), &SIGMA_PAIRS, plan)?;
                Ok(CheckRow::stats("sigma_flow", f.composition.merge(&f.identity), tol.sigma_flow))
            }));
            report.push(row("small_time", || {
                let r = check_small_time_extension(&vflow, action, SMALL_TIME_DELTA, SMALL_TIME_STEPS, plan)?;
                Ok(CheckRow::stats("small_time", r.residual, tol.small_time).with_detail(format!(
                    "delta = {SMALL_TIME_DELTA}, n <= {SMALL_TIME_STEPS}, recovery failures {}",
                    r.failures
                )))
            }));
            if inv.classification == Classification::Strong {
                let gs = plan.group_elements(action.group())?;
                report.push(row("w_zero", || {
                    let stats = match inv.stat("strong_xi_norm") {
                        Some(s) => s,
                        None => max_over(&gs, |g| Ok(w.eval(g)?.matrix().norm()))?,
                    };
                    Ok(CheckRow::stats("w_zero", stats, tol.strong))
                }));
                report.push(row("sigma_identity", || {
                    let stats = max_over(&gs, |g| Ok(sigma.at(SIGMA_TIME, g)?.distance(g)))?;
                    Ok(CheckRow::stats("sigma_identity", stats, tol.sigma_match))
                }));
            }
        }
    }

    if *s.action.kind() == ActionKind::LeftTranslation {
        let vg = as_group_field(&s.field)?;
        report.push(row("group_affine", || {
            Ok(CheckRow::stats("group_affine", check_group_affine(&vg, plan)?, tol.group_affine))
        }));
        match (&inv.recovered_w, inv.classification) {
            (Some(rec), Classification::Weak | Classification::Strong) => report.push(row("affine_cross_path", || {
                let dec = group_affine_decompose(&vg, plan, tol.group_linear)?;
                let gs = plan.group_elements(s.action.group())?;
                let stats = max_over(&gs, |g| Ok((dec.w.eval(g)?.matrix() - rec.eval(g)?.matrix()).norm()))?;
                Ok(CheckRow::stats("affine_cross_path", stats, tol.group_linear)
                    .with_detail(format!("U = {:?}", dec.u.coords().as_slice())))
            })),
            _ => report.push(CheckRow::skipped("affine_cross_path", "no recovered W")),
        }
    }

    if let Some(chart) = &s.chart {
        report.push_chart_rows(s, chart, w.as_ref());
    }
    Ok(report)
}

trait ChartRows {
    fn push_chart_rows(&mut self, s: &Scenario, chart: &BundleChart, w: Option<&VectorFieldG>);
}

impl ChartRows for RunReport {
    fn push_chart_rows(&mut self, s: &Scenario, chart: &BundleChart, w: Option<&VectorFieldG>) {
        let tol = &s.tolerances;
        let plan = &s.plan;
        match chart.check_chart(plan, CHART_POINTS) {
            Ok(c) => {
                self.push(CheckRow::stats("chart_project_section", c.project_section, tol.round_trip));
                self.push(CheckRow::stats("chart_round_trip", c.round_trip, CHART_TOL));
                self.push(CheckRow::stats("chart_d_project_section", c.d_project_section, CHART_TOL));
            }
            Err(e) => {
                for name in ["chart_project_section", "chart_round_trip", "chart_d_project_section"] {
                    self.push(CheckRow::error(name, &e));
                }
            }
        }
        self.push(row("well_definedness", || {
            Ok(CheckRow::stats("well_definedness", check_well_definedness(&s.field, chart, plan)?, tol.weak))
        }));
        let Some(w) = w else {
            self.push(CheckRow::skipped("forcing_residual", "needs a Weak or Strong field"));
            self.push(CheckRow::skipped("cascade_equivalence", "needs a Weak or Strong field"));
            return;
        };
        let system = match CascadeSystem::new(s.field.clone(), w.clone(), chart.clone(), tol.forcing) {
            Ok(sys) => sys,
            Err(e) => {
                self.push(CheckRow::error("forcing_residual", &e));
                self.push(CheckRow::error("cascade_equivalence", &e));
                return;
            }
        };
        self.push(row("forcing_residual", || {
            Ok(CheckRow::stats("forcing_residual", system.check_forcing(plan)?, tol.forcing))
        }));
        self.push(row("cascade_equivalence", || {
            let (y0, g0) = start_state(s, chart, None, None)?;
            let t = s.decompose.t.unwrap_or(1.0);
            let run = run_decomposition(s, &system, t, &y0, &g0)?;
            Ok(CheckRow::value("cascade_equivalence", run.deviation, tol.cascade).with_detail(format!("t = {t}")))
        }));
    }
}

/// `(y0, g0)` from explicit values, else the scenario's defaults, else the
/// decomposition of the first sampled point.
fn start_state(
    s: &Scenario,
    chart: &BundleChart,
    y0: Option<Vec<f64>>,
    g0: Option<Vec<f64>>,
) -> Result<(QuotientPoint, GroupElement)> {
    let y0 = y0.or_else(|| s.decompose.y0.clone());
    let g0 = g0.or_else(|| s.decompose.g0.clone());
    let (dy, dg) = match (&y0, &g0) {
        (Some(_), Some(_)) => (None, None),
        _ => {
            let p = s
                .plan
                .manifold_points_n(s.action.manifold(), 1, weakinv_core::sampling::Stream::Points)?
                .remove(0);
            let (g, y) = chart.decompose(&p)?;
            (Some(y), Some(g))
        }
    };
    let y = match y0 {
        Some(v) => {
            if v.len() != chart.quotient_dim() {
                bail!("y0 has {} coordinates, the quotient has dimension {}", v.len(), chart.quotient_dim());
            }
            QuotientPoint::from_slice(&v)?
        }
        None => dy.expect("decomposed start"),
    };
    let g = match g0 {
        Some(c) => {
            let d = s.action.group().algebra_dim();
            if c.len() != d {
                bail!("g0 has {} coordinates, the group has dimension {d}", c.len());
            }
            GroupElement::from_coords(s.action.group(), &c)?
        }
        None => dg.expect("decomposed start"),
    };
    Ok((y, g))
}

struct Decomposition {
    cascade: Vec<weakinv_core::cascade::CascadeRow>,
    direct: Vec<(f64, DVector<f64>)>,
    deviation: f64,
}

fn run_decomposition(
    s: &Scenario,
    system: &CascadeSystem,
    t: f64,
    y0: &QuotientPoint,
    g0: &GroupElement,
) -> Result<Decomposition> {
    let cascade = cascade_trajectory(system, &w_config(s), t, y0, g0)?;
    let start = reconstruct(system.chart(), y0, g0)?;
    let direct = FlowHandle::new(s.field.clone(), s.integrator)?.trajectory(t, &start)?;
    let (Some(c), Some(d)) = (cascade.last(), direct.last()) else {
        bail!("empty trajectory");
    };
    let deviation = (&c.p - &d.1).norm();
    Ok(Decomposition {
        cascade,
        direct,
        deviation,
    })
}

/// Integrates the cascade and `V` directly from the same start, writes both
/// trajectories to `out` and reports the terminal deviation.
pub fn decompose(s: &Scenario, t: Option<f64>, y0: Option<Vec<f64>>, g0: Option<Vec<f64>>, out: &Path) -> Result<RunReport> {
    let Some(chart) = &s.chart else {
        bail!("scenario {} has no chart; decompose needs a [chart] table", s.name);
    };
    let t = t.or(s.decompose.t).context("no --t given and the scenario sets no decompose.t")?;
    if !t.is_finite() {
        bail!("--t must be finite");
    }
    let inv = run_classification(s)?;
    let Some(w) = select_w(s, &inv)? else {
        bail!("decompose needs a Weak or Strong field; {} classifies {}", s.name, inv.classification);
    };
    let system = CascadeSystem::new(s.field.clone(), w, chart.clone(), s.tolerances.forcing)?;
    let (y0, g0) = start_state(s, chart, y0, g0)?;
    let run = run_decomposition(s, &system, t, &y0, &g0)?;

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let cascade_name = format!("{}_cascade.csv", s.name);
    let direct_name = format!("{}_direct.csv", s.name);
    let open = |name: &str| -> Result<BufWriter<File>> {
        let path = out.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?))
    };
    write_cascade_csv(open(&cascade_name)?, &run.cascade)?;
    write_trajectory_csv(open(&direct_name)?, &run.direct)?;

    let mut report = RunReport::new("decompose", s);
    report.classification = Some(inv.classification.to_string());
    report.push(row("forcing_residual", || {
        Ok(CheckRow::stats("forcing_residual", system.check_forcing(&s.plan)?, s.tolerances.forcing))
    }));
    report.push(CheckRow::value("cascade_equivalence", run.deviation, s.tolerances.cascade).with_detail(format!("t = {t}")));
    let u = if *s.action.kind() == ActionKind::LeftTranslation {
        let dec = group_affine_decompose(&as_group_field(&s.field)?, &s.plan, s.tolerances.group_linear)?;
        Some(dec.u.coords().as_slice().to_vec())
    } else {
        None
    };
    let last = run.cascade.last().expect("non-empty");
    report.decompose = Some(DecomposeSummary {
        t,
        y0: y0.coords().as_slice().to_vec(),
        g0: flatten_row_major(g0.matrix()),
        y_final: last.y.as_slice().to_vec(),
        g_final: flatten_row_major(&last.g),
        p_cascade: last.p.as_slice().to_vec(),
        p_direct: run.direct.last().expect("non-empty").1.as_slice().to_vec(),
        deviation: run.deviation,
        rows: run.cascade.len(),
        derivation: s.derivation.as_ref().map(flatten_row_major),
        u,
        files: vec![cascade_name, direct_name],
    });
    Ok(report)
}

/// Builtin groups, actions, field families, charts and the scenarios found.
pub fn list() -> String {
    let mut out = String::new();
    let section = |out: &mut String, title: &str, items: &[&str]| {
        out.push_str(title);
        out.push_str(":\n");
        for i in items {
            out.push_str("  ");
            out.push_str(i);
            out.push('\n');
        }
    };
    section(&mut out, "groups", scenario::GROUPS);
    section(&mut out, "actions", scenario::ACTIONS);
    section(&mut out, "field families", scenario::FAMILIES);
    section(&mut out, "charts", scenario::CHARTS);
    out.push_str("scenarios:\n");
    for (name, origin) in scenario::available() {
        out.push_str(&format!("  {name} ({origin})\n"));
    }
    out
}
