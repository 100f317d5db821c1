//! Acceptance suite, run without the libtest harness so every criterion line
//! is printed. Exits non-zero if any criterion fails. Oracles are computed
//! here, independently of the library.

use std::process::Command;

use anyhow::{ensure, Context, Result};
use nalgebra::{DMatrix, DVector};

use weakinv_cli::Scenario;
use weakinv_core::actions::{ActionKind, ManifoldDescriptor, ManifoldPoint};
use weakinv_core::cascade::{
    as_group_field, check_cascade_equivalence, check_group_affine, group_affine_decompose, CascadeSystem,
    QuotientPoint,
};
use weakinv_core::flows::{
    check_flow_derivative, check_flow_weak_invariance, check_sigma_is_flow, check_small_time_extension, FlowHandle,
    IntegratorConfig, SigmaFromFlow,
};
use weakinv_core::invariance::{
    check_automorphism, classify_vector_field, solve_xi_w, Classification, GroupMap, InvarianceReport,
};
use weakinv_core::lie::matrix::expm;
use weakinv_core::lie::{check_group_linear, GroupElement, LieGroup, VectorFieldG};
use weakinv_core::SamplingPlan;

const FLOW_TIMES: [f64; 3] = [0.1, 0.5, 1.0];
const SIGMA_PAIRS: [(f64, f64); 4] = [(0.1, 0.1), (0.1, 0.2), (0.2, 0.1), (0.2, 0.2)];

/// One measured quantity against its pinned bound.
type Criterion = fn() -> Result<Vec<Measure>>;

struct Measure {
    what: String,
    value: f64,
    bound: f64,
    /// `value < bound` when false, `value >= bound` when true.
    at_least: bool,
}

impl Measure {
    fn below(what: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            what: what.into(),
            value,
            bound,
            at_least: false,
        }
    }
    fn above(what: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            what: what.into(),
            value,
            bound,
            at_least: true,
        }
    }
    fn flag(what: impl Into<String>, ok: bool) -> Self {
        Self::below(what, if ok { 0.0 } else { 1.0 }, 0.5)
    }
    fn ok(&self) -> bool {
        if self.at_least {
            self.value >= self.bound
        } else {
            self.value < self.bound
        }
    }
    fn show(&self) -> String {
        let op = if self.at_least { ">=" } else { "<" };
        format!("{} {:.3e} {op} {:.0e}", self.what, self.value, self.bound)
    }
}

fn scenario(name: &str) -> Scenario {
    Scenario::builtin(name).expect("bundled").expect("valid")
}

fn classify(s: &Scenario) -> Result<InvarianceReport> {
    Ok(classify_vector_field(&s.field, &s.action, &s.plan, &s.tolerances)?)
}

fn recovered_w(s: &Scenario) -> Result<(InvarianceReport, VectorFieldG)> {
    let inv = classify(s)?;
    ensure!(inv.classification == Classification::Weak, "{} classifies {}", s.name, inv.classification);
    let w = inv.recovered_w.clone().context("no recovered W")?;
    Ok((inv, w))
}

fn flows(s: &Scenario, w: VectorFieldG) -> Result<(FlowHandle, FlowHandle)> {
    Ok((
        FlowHandle::new(s.field.clone(), s.integrator)?,
        FlowHandle::new(w, IntegratorConfig::group_default())?,
    ))
}

// V(p) = a + b p on R: φ_t(p) = e^{bt} p + (a/b)(e^{bt} − 1).
fn closed_form_flow() -> Result<Vec<Measure>> {
    let (a, b, t) = (1.0, 0.5, 1.0);
    let s = scenario("r1_scalar");
    let flow = FlowHandle::new(s.field.clone(), IntegratorConfig::default())?;
    let m = ManifoldDescriptor::euclidean(1);
    let mut worst: f64 = 0.0;
    for p in [-2.0, -0.5, 0.0, 1.0, 3.0] {
        let got = flow.evaluate(t, &ManifoldPoint::from_slice(&m, &[p])?)?.coords()[0];
        let want = (b * t).exp() * p + a / b * ((b * t).exp() - 1.0);
        worst = worst.max((got - want).abs());
    }
    Ok(vec![Measure::below("max |φ_1(p) − oracle|", worst, 1e-10)])
}

// ξ^W(g) = A x for translations by x.
fn w_recovery() -> Result<Vec<Measure>> {
    let s = scenario("rn_affine");
    let a = DMatrix::from_row_slice(3, 3, &[0.2, -0.5, 0.1, 0.5, 0.1, 0.0, 0.0, 0.3, -0.2]);
    let plan = SamplingPlan { groups: 50, ..s.plan };
    let points = plan.manifold_points(s.action.manifold())?;
    let mut worst: f64 = 0.0;
    for g in plan.group_elements(s.action.group())? {
        let x = g.matrix().view((0, 3), (3, 1)).into_owned();
        let xi = solve_xi_w(&s.field, &s.action, &g, &points)?.xi;
        worst = worst.max((xi.coords() - &a * x).amax());
    }
    let (_, w) = recovered_w(&s)?;
    Ok(vec![
        Measure::below("max coord error over 50 g", worst, 1e-10),
        Measure::below("group-linear residual", check_group_linear(&w, &s.plan)?.max, 1e-12),
    ])
}

fn weak_builtins() -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (name, _) in weakinv_cli::scenario::BUILTIN {
        let s = scenario(name);
        if classify(&s)?.classification == Classification::Weak {
            out.push(s);
        }
    }
    Ok(out)
}

fn sigma_and_w_structure() -> Result<Vec<Measure>> {
    let mut out = Vec::new();
    for s in weak_builtins()? {
        let (_, w) = recovered_w(&s)?;
        let vflow = FlowHandle::new(s.field.clone(), s.integrator)?;
        let plan = SamplingPlan { pairs: 50, ..s.plan };
        let sigma = SigmaFromFlow::new(&vflow, &s.action, &plan)?.group_map(0.1);
        out.push(Measure::below(format!("{} σ_0.1 automorphism", s.name), check_automorphism(&sigma, &plan)?.max(), 1e-8));
        out.push(Measure::below(format!("{} W group-linear", s.name), check_group_linear(&w, &plan)?.max, 1e-8));
    }
    Ok(out)
}

fn necessity() -> Result<Vec<Measure>> {
    let mut out = Vec::new();
    for name in ["rn_affine", "so3_group_affine"] {
        let s = scenario(name);
        let (_, w) = recovered_w(&s)?;
        let (v, wf) = flows(&s, w)?;
        let r = check_flow_weak_invariance(&v, &wf, &s.action, &FLOW_TIMES, &s.plan)?;
        out.push(Measure::below(format!("{name} flow relation"), r.max, 1e-6));
    }
    Ok(out)
}

fn sufficiency() -> Result<Vec<Measure>> {
    let mut out = Vec::new();
    for name in ["rn_affine", "so3_group_affine"] {
        let s = scenario(name);
        let (_, w) = recovered_w(&s)?;
        let (v, wf) = flows(&s, w)?;
        let d = check_flow_derivative(&v, &wf, &s.action, &s.plan)?;
        out.push(Measure::below(format!("{name} d/dt at 0"), d.sides.max.max(d.analytic.max), 1e-4));
    }
    let s = scenario("rn_affine_corrupted");
    let (_, w) = recovered_w(&s)?;
    let scale = s.w.as_ref().context("corrupted fixture has [w]")?.scale;
    let (v, wf) = flows(&s, w.scaled(scale))?;
    let d = check_flow_derivative(&v, &wf, &s.action, &s.plan)?;
    out.push(Measure::above("corrupted W mismatch", d.sides.max, 1e-1));
    Ok(out)
}

fn sigma_is_flow() -> Result<Vec<Measure>> {
    let mut out = Vec::new();
    // SO3: σ_t(g) = e^{tD} g e^{−tD}.
    let s = scenario("so3_group_affine");
    let d = s.derivation.clone().context("D")?;
    let vflow = FlowHandle::new(s.field.clone(), s.integrator)?;
    let sigma = SigmaFromFlow::new(&vflow, &s.action, &s.plan)?;
    let f = check_sigma_is_flow(|t, g| sigma.at(t, g), s.action.group(), &SIGMA_PAIRS, &s.plan)?;
    out.push(Measure::below("SO3 σ composition", f.composition.max, 1e-7));
    let mut oracle: f64 = 0.0;
    for g in s.plan.group_elements(s.action.group())? {
        let want = expm(&(&d * 0.2)) * g.matrix() * expm(&(&d * -0.2));
        oracle = oracle.max((sigma.at(0.2, &g)?.matrix() - want).norm());
    }
    out.push(Measure::below("SO3 σ_0.2 vs conjugation", oracle, 1e-8));
    // R: σ_t(x) = e^{bt} x.
    let s = scenario("r1_scalar");
    let vflow = FlowHandle::new(s.field.clone(), s.integrator)?;
    let sigma = SigmaFromFlow::new(&vflow, &s.action, &s.plan)?;
    let f = check_sigma_is_flow(|t, g| sigma.at(t, g), s.action.group(), &SIGMA_PAIRS, &s.plan)?;
    out.push(Measure::below("scalar σ composition", f.composition.max, 1e-7));
    let mut oracle: f64 = 0.0;
    for g in s.plan.group_elements(s.action.group())? {
        let x = g.matrix()[(0, 1)];
        oracle = oracle.max((sigma.at(0.2, &g)?.matrix()[(0, 1)] - (0.5f64 * 0.2).exp() * x).abs());
    }
    out.push(Measure::below("scalar σ_0.2 vs e^{bt}x", oracle, 1e-8));
    Ok(out)
}

fn small_time() -> Result<Vec<Measure>> {
    let mut out = Vec::new();
    for name in ["rn_affine", "so3_group_affine"] {
        let s = scenario(name);
        let vflow = FlowHandle::new(s.field.clone(), s.integrator)?;
        let r = check_small_time_extension(&vflow, &s.action, 0.05, 8, &s.plan)?;
        out.push(Measure::flag(format!("{name} σ recoveries"), r.failures == 0));
        out.push(Measure::below(format!("{name} (σ_δ)^n, n ≤ 8"), r.residual.max, 1e-7));
    }
    Ok(out)
}

// x' = −y, y' = x, z' = 0.3 z + x: x = x0 cos t − y0 sin t, y = x0 sin t + y0 cos t and
// z(t) = e^{ct} z0 + ∫ e^{c(t−s)} x(s) ds in closed form.
fn cascade_equivalence() -> Result<Vec<Measure>> {
    let s = scenario("r3_cascade");
    let (_, w) = recovered_w(&s)?;
    let chart = s.chart.clone().context("chart")?;
    let system = CascadeSystem::new(s.field.clone(), w, chart, s.tolerances.forcing)?;
    let y0 = QuotientPoint::from_slice(&[1.0, 0.5])?;
    let g0 = GroupElement::from_coords(s.action.group(), &[0.25])?;
    let cfg = IntegratorConfig::group_default();
    let rep = check_cascade_equivalence(&system, &cfg, &IntegratorConfig::default(), 1.0, &y0, &g0)?;
    let (x0, yy0, z0, c, t) = (1.0f64, 0.5f64, 0.25f64, 0.3f64, 1.0f64);
    // ∫_0^t e^{c(t−s)} (x0 cos s − y0 sin s) ds
    let k = 1.0 + c * c;
    let int_cos = ((t.sin() - c * t.cos()) + c * (c * t).exp()) / k;
    let int_sin = ((-t.cos() - c * t.sin()) + (c * t).exp()) / k;
    let z = (c * t).exp() * z0 + x0 * int_cos - yy0 * int_sin;
    Ok(vec![
        Measure::below("|cascade − direct| at t = 1", rep.deviation, 1e-6),
        Measure::below("|z_cascade − closed form|", (rep.cascade.coords()[2] - z).abs(), 1e-6),
    ])
}

fn group_affine_iff_weak() -> Result<Vec<Measure>> {
    let s = scenario("so3_group_affine");
    let vg = as_group_field(&s.field)?;
    let d = s.derivation.clone().context("D")?;
    let mut out = vec![Measure::below("check_group_affine", check_group_affine(&vg, &s.plan)?.max, 1e-12)];
    let inv = classify(&s)?;
    out.push(Measure::flag("classifies Weak under the left action", inv.classification == Classification::Weak));
    let rec = inv.recovered_w.context("recovered W")?;
    let dec = group_affine_decompose(&vg, &s.plan, 1e-8)?;
    let u_want = DVector::from_column_slice(&[0.1, 0.4, -0.3]);
    let (mut vs_d, mut vs_rec): (f64, f64) = (0.0, 0.0);
    for g in s.plan.group_elements(s.action.group())? {
        let m = g.matrix();
        let dw = dec.w.eval(&g)?.matrix().clone();
        vs_d = vs_d.max((&dw - (&d * m - m * &d)).norm());
        vs_rec = vs_rec.max((&dw - rec.eval(&g)?.matrix()).norm());
    }
    out.push(Measure::below("decomposed W vs Dg − gD", vs_d, 1e-8));
    out.push(Measure::below("decomposed U vs U", (dec.u.coords() - u_want).norm(), 1e-8));
    out.push(Measure::below("decomposed W vs recovered W", vs_rec, 1e-8));
    for (name, _) in weakinv_cli::scenario::BUILTIN {
        let s = scenario(name);
        if *s.action.kind() == ActionKind::LeftTranslation && classify(&s)?.classification == Classification::Weak {
            let r = check_group_affine(&as_group_field(&s.field)?, &s.plan)?.max;
            out.push(Measure::below(format!("{name} Weak ⇒ group affine"), r, 1e-8));
        }
    }
    Ok(out)
}

fn negative_controls() -> Result<Vec<Measure>> {
    let none = classify(&scenario("so2_symmetric_traceless"))?.classification;
    let partial = classify(&scenario("r3_partial"))?.classification;
    // g ↦ g² is not a homomorphism of SO3; oracle at one pair first.
    let group = LieGroup::so3();
    let a = GroupElement::from_coords(&group, &[0.8, 0.0, 0.0])?;
    let b = GroupElement::from_coords(&group, &[0.0, 0.8, 0.0])?;
    let sq = |m: &DMatrix<f64>| m * m;
    let oracle = (sq(&(a.matrix() * b.matrix())) - sq(a.matrix()) * sq(b.matrix())).norm();
    let square = GroupMap::new(&group, "square", |g| g.compose(g));
    let stats = check_automorphism(&square, &SamplingPlan::default())?;
    Ok(vec![
        Measure::flag(format!("symmetric traceless → {none}"), none == Classification::None),
        Measure::flag(format!("orbit-tangent but inconsistent → {partial}"), partial == Classification::PartialOnly),
        Measure::above("g ↦ g² oracle pair", oracle, 1e-2),
        Measure::above("g ↦ g² homomorphism residual", stats.homomorphism.max, 1e-2),
    ])
}

fn determinism() -> Result<Vec<Measure>> {
    let run = || -> Result<(Vec<u8>, Vec<u8>)> {
        let dir = tempfile::tempdir()?;
        let out = Command::new(env!("CARGO_BIN_EXE_weakinv"))
            .args(["verify", "r3_cascade", "--seed", "11", "--json", "--out"])
            .arg(dir.path())
            .output()?;
        ensure!(out.status.code() == Some(0), "verify exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
        let file = std::fs::read(dir.path().join("r3_cascade_verify.json"))?;
        Ok((out.stdout, file))
    };
    let (a_out, a_file) = run()?;
    let (b_out, b_file) = run()?;
    Ok(vec![
        Measure::flag("stdout JSON identical", a_out == b_out && !a_out.is_empty()),
        Measure::flag("report file identical", a_file == b_file && a_file == a_out),
    ])
}

fn main() -> std::process::ExitCode {
    let criteria: [(&str, Criterion); 11] = [
        ("closed-form flow oracle", closed_form_flow),
        ("W recovery exactness", w_recovery),
        ("σ automorphism and W group linear on Weak scenarios", sigma_and_w_structure),
        ("flow relation (necessity)", necessity),
        ("derivative at zero (sufficiency)", sufficiency),
        ("σ_t is a flow", sigma_is_flow),
        ("small-time extension", small_time),
        ("cascade equivalence", cascade_equivalence),
        ("group affine iff weakly left invariant", group_affine_iff_weak),
        ("negative controls", negative_controls),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        let (ok, detail) = match f() {
            Ok(ms) => (
                ms.iter().all(Measure::ok),
                ms.iter().map(Measure::show).collect::<Vec<_>>().join("; "),
            ),
            Err(e) => (false, format!("error: {e:#}")),
        };
        println!("criterion {n:2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(n);
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed.len(), criteria.len());
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
