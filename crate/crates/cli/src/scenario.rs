//! Declarative scenario files.
//!
//! A scenario names a group, a manifold, a builtin action and a parametric
//! field family, plus optional chart, sampling, tolerance and integrator
//! tables. Everything is checked for consistent dimensions on load, before
//! any computation, and errors carry the offending field path.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use weakinv_core::actions::{CascadeParams, GroupAction, VectorFieldM};
use weakinv_core::cascade::BundleChart;
use weakinv_core::flows::{FlowHandle, IntegratorConfig, Projection, Scheme};
use weakinv_core::lie::{AlgebraVector, LieGroup, VectorFieldG};
use weakinv_core::{SamplingPlan, Tolerances};

/// Colon-separated list of directories searched for `<name>.toml` before the
/// bundled scenarios.
pub const SCENARIO_PATH_ENV: &str = "WEAKINV_SCENARIO_PATH";

pub const BUILTIN: &[(&str, &str)] = &[
    ("rn_affine", include_str!("../scenarios/rn_affine.toml")),
    ("rn_affine_corrupted", include_str!("../scenarios/rn_affine_corrupted.toml")),
    ("r1_scalar", include_str!("../scenarios/r1_scalar.toml")),
    ("so2_strong", include_str!("../scenarios/so2_strong.toml")),
    ("so2_symmetric_traceless", include_str!("../scenarios/so2_symmetric_traceless.toml")),
    ("r2_scaling_rotation", include_str!("../scenarios/r2_scaling_rotation.toml")),
    ("r3_cascade", include_str!("../scenarios/r3_cascade.toml")),
    ("r3_partial", include_str!("../scenarios/r3_partial.toml")),
    ("so3_group_affine", include_str!("../scenarios/so3_group_affine.toml")),
    ("se2_group_affine", include_str!("../scenarios/se2_group_affine.toml")),
];

pub const GROUPS: &[&str] = &["so2", "so3", "se2", "se3", "translation", "so2xr"];
pub const ACTIONS: &[&str] = &["translation", "left", "rotation", "rigid", "scaling_rotation"];
pub const FAMILIES: &[&str] = &["affine", "group_affine", "left_invariant", "cascade"];
pub const CHARTS: &[&str] = &["translation", "transitive", "radial", "scaling_rotation"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    group: RawGroup,
    manifold: RawManifold,
    action: RawAction,
    field: RawField,
    w: Option<RawW>,
    chart: Option<RawChart>,
    #[serde(default)]
    sampling: RawSampling,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
    integrator: Option<RawIntegrator>,
    decompose: Option<RawDecompose>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    name: String,
    dim: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifold {
    kind: String,
    dim: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    name: String,
    axes: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum RawField {
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
    GroupAffine { d: Vec<Vec<f64>>, u: Vec<f64> },
    LeftInvariant { xi: Vec<f64> },
    Cascade {
        f1: Option<[f64; 6]>,
        f2: Option<[f64; 6]>,
        h: Option<[f64; 6]>,
        c: Option<f64>,
        f1_xz: Option<f64>,
        z_x: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawW {
    d: Option<Vec<Vec<f64>>>,
    scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChart {
    kind: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampling {
    seed: Option<u64>,
    groups: Option<usize>,
    points: Option<usize>,
    pairs: Option<usize>,
    #[serde(rename = "box")]
    box_half_width: Option<f64>,
    point_box: Option<f64>,
    min_radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    scheme: Option<Scheme>,
    step: Option<f64>,
    projection: Option<Projection>,
    blowup: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecompose {
    t: Option<f64>,
    y0: Option<Vec<f64>>,
    g0: Option<Vec<f64>>,
}

/// Explicit `W` for verification and decomposition. Without `d` the
/// recovered `W` is used; `scale` multiplies whichever is chosen.
#[derive(Debug, Clone)]
pub struct WOverride {
    pub d: Option<DMatrix<f64>>,
    pub scale: f64,
}

/// Default arguments of `decompose`.
#[derive(Debug, Clone, Default)]
pub struct DecomposeDefaults {
    pub t: Option<f64>,
    pub y0: Option<Vec<f64>>,
    pub g0: Option<Vec<f64>>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub source: String,
    pub action: GroupAction,
    pub field: VectorFieldM,
    /// `D` of a `group_affine` field, echoed by `decompose`.
    pub derivation: Option<DMatrix<f64>>,
    pub w: Option<WOverride>,
    pub chart: Option<BundleChart>,
    pub plan: SamplingPlan,
    pub tolerances: Tolerances,
    pub integrator: IntegratorConfig,
    pub decompose: DecomposeDefaults,
}

fn invalid(path: &str, msg: impl Display) -> anyhow::Error {
    anyhow!("{path}: {msg}")
}

fn matrix(path: &str, rows: &[Vec<f64>], n: usize, m: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n {
        return Err(invalid(path, format!("expected {n} rows, found {}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != m {
            return Err(invalid(&format!("{path}[{i}]"), format!("expected {m} entries, found {}", r.len())));
        }
    }
    finite(path, rows.iter().flatten())?;
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn vector(path: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(invalid(path, format!("expected {n} entries, found {}", v.len())));
    }
    finite(path, v)?;
    Ok(DVector::from_column_slice(v))
}

fn finite<'a>(path: &str, v: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if v.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(path, "entries must be finite"))
    }
}

fn build_group(g: &RawGroup) -> Result<Arc<LieGroup>> {
    let group = match g.name.as_str() {
        "so2" => LieGroup::so2(),
        "so3" => LieGroup::so3(),
        "se2" => LieGroup::se2(),
        "se3" => LieGroup::se3(),
        "so2xr" => LieGroup::product(vec![LieGroup::so2(), LieGroup::translation(1)]),
        "translation" => match g.dim {
            Some(n) if n > 0 => LieGroup::translation(n),
            _ => return Err(invalid("group.dim", "translation group needs dim ≥ 1")),
        },
        other => return Err(invalid("group.name", format!("unknown group `{other}`, expected one of {GROUPS:?}"))),
    };
    if g.name != "translation" && g.dim.is_some_and(|d| d != group.algebra_dim()) {
        return Err(invalid("group.dim", format!("{group} has dimension {}", group.algebra_dim())));
    }
    Ok(group)
}

fn build_action(raw: &RawScenario, group: &Arc<LieGroup>) -> Result<GroupAction> {
    let name = raw.action.name.as_str();
    if raw.action.axes.is_some() && name != "translation" {
        return Err(invalid("action.axes", "only the translation action takes axes"));
    }
    let action = match name {
        "translation" => {
            let ambient = match (raw.manifold.kind.as_str(), raw.manifold.dim) {
                ("euclidean", Some(n)) => n,
                _ => return Err(invalid("manifold", "translation action needs a euclidean manifold with dim")),
            };
            let axes = raw.action.axes.clone().unwrap_or_else(|| (0..group.algebra_dim()).collect());
            GroupAction::translation(ambient, axes).map_err(|e| invalid("action.axes", e))?
        }
        "left" => GroupAction::left_translation(group.clone()),
        "rotation" => GroupAction::rotation(group.clone()).map_err(|e| invalid("action.name", e))?,
        "rigid" => GroupAction::rigid(group.clone()).map_err(|e| invalid("action.name", e))?,
        "scaling_rotation" => GroupAction::scaling_rotation(),
        other => return Err(invalid("action.name", format!("unknown action `{other}`, expected one of {ACTIONS:?}"))),
    };
    if action.group().as_ref() != group.as_ref() {
        return Err(invalid("group", format!("action `{name}` acts by {}, scenario declares {group}", action.group())));
    }
    let m = action.manifold();
    match raw.manifold.kind.as_str() {
        "euclidean" => {
            if m.as_group().is_some() {
                return Err(invalid("manifold.kind", format!("action `{name}` acts on the group itself")));
            }
            if raw.manifold.dim != Some(m.ambient_dim()) {
                return Err(invalid("manifold.dim", format!("action `{name}` acts on R^{}", m.ambient_dim())));
            }
        }
        "group" => {
            if m.as_group().is_none() {
                return Err(invalid("manifold.kind", format!("action `{name}` acts on {m}, not on a group")));
            }
            if raw.manifold.dim.is_some() {
                return Err(invalid("manifold.dim", "a group manifold takes its dimension from the group"));
            }
        }
        other => return Err(invalid("manifold.kind", format!("unknown manifold kind `{other}`, expected euclidean or group"))),
    }
    Ok(action)
}

fn build_field(raw: &RawField, action: &GroupAction) -> Result<(VectorFieldM, Option<DMatrix<f64>>)> {
    let m = action.manifold();
    let on_group = |family: &str| -> Result<Arc<LieGroup>> {
        m.as_group()
            .cloned()
            .ok_or_else(|| invalid("field.family", format!("`{family}` needs a group manifold")))
    };
    Ok(match raw {
        RawField::Affine { a, b } => {
            if m.as_group().is_some() {
                return Err(invalid("field.family", "`affine` needs a euclidean manifold"));
            }
            let n = m.ambient_dim();
            let field = VectorFieldM::affine(matrix("field.a", a, n, n)?, vector("field.b", b, n)?)?;
            (field, None)
        }
        RawField::GroupAffine { d, u } => {
            let g = on_group("group_affine")?;
            let n = g.matrix_dim();
            let d = matrix("field.d", d, n, n)?;
            let u = AlgebraVector::new(g.clone(), vector("field.u", u, g.algebra_dim())?)?;
            (VectorFieldM::on_group(VectorFieldG::group_affine(&g, d.clone(), u)?), Some(d))
        }
        RawField::LeftInvariant { xi } => {
            let g = on_group("left_invariant")?;
            let xi = AlgebraVector::new(g.clone(), vector("field.xi", xi, g.algebra_dim())?)?;
            (VectorFieldM::on_group(VectorFieldG::left_invariant(xi)), None)
        }
        RawField::Cascade {
            f1,
            f2,
            h,
            c,
            f1_xz,
            z_x,
        } => {
            if m.as_group().is_some() || m.ambient_dim() != 3 {
                return Err(invalid("field.family", "`cascade` needs the euclidean manifold R^3"));
            }
            let params = CascadeParams {
                f1: f1.unwrap_or_default(),
                f2: f2.unwrap_or_default(),
                h: h.unwrap_or_default(),
                c: c.unwrap_or_default(),
                f1_xz: f1_xz.unwrap_or_default(),
                z_x: z_x.unwrap_or_default(),
            };
            finite("field", params.f1.iter().chain(&params.f2).chain(&params.h).chain([&params.c, &params.f1_xz, &params.z_x]))?;
            (VectorFieldM::cascade_synthetic(params), None)
        }
    })
}

fn build_chart(raw: &RawChart, action: &GroupAction) -> Result<BundleChart> {
    let chart = match raw.kind.as_str() {
        "translation" => BundleChart::translation(action),
        "transitive" => BundleChart::transitive(action),
        "radial" => BundleChart::radial(action),
        "scaling_rotation" => BundleChart::scaling_rotation(action),
        other => return Err(invalid("chart.kind", format!("unknown chart `{other}`, expected one of {CHARTS:?}"))),
    };
    chart.map_err(|e| invalid("chart.kind", e))
}

fn build_plan(raw: &RawSampling) -> Result<SamplingPlan> {
    let d = SamplingPlan::default();
    let plan = SamplingPlan {
        seed: raw.seed.unwrap_or(d.seed),
        groups: raw.groups.unwrap_or(d.groups),
        points: raw.points.unwrap_or(d.points),
        pairs: raw.pairs.unwrap_or(d.pairs),
        box_half_width: raw.box_half_width.unwrap_or(d.box_half_width),
        point_box: raw.point_box.unwrap_or(d.point_box),
        min_radius: raw.min_radius.unwrap_or(d.min_radius),
    };
    for (name, n) in [("groups", plan.groups), ("points", plan.points), ("pairs", plan.pairs)] {
        if n == 0 {
            return Err(invalid(&format!("sampling.{name}"), "must be at least 1"));
        }
    }
    for (name, x) in [("box", plan.box_half_width), ("point_box", plan.point_box)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(invalid(&format!("sampling.{name}"), "must be positive"));
        }
    }
    if !(plan.min_radius >= 0.0 && plan.min_radius < plan.point_box) {
        return Err(invalid("sampling.min_radius", "must lie in [0, point_box)"));
    }
    Ok(plan)
}

impl Scenario {
    /// Parses and validates scenario text. `source` only labels errors.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        Self::parse_inner(text, source).with_context(|| format!("invalid scenario {source}"))
    }

    fn parse_inner(text: &str, source: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text)?;
        let group = build_group(&raw.group)?;
        let action = build_action(&raw, &group)?;
        let (field, derivation) = build_field(&raw.field, &action)?;
        let w = match &raw.w {
            None => None,
            Some(w) => {
                let n = group.matrix_dim();
                let d = w.d.as_ref().map(|d| matrix("w.d", d, n, n)).transpose()?;
                let scale = w.scale.unwrap_or(1.0);
                finite("w.scale", [&scale])?;
                Some(WOverride { d, scale })
            }
        };
        let chart = raw.chart.as_ref().map(|c| build_chart(c, &action)).transpose()?;
        let plan = build_plan(&raw.sampling)?;
        let mut tolerances = Tolerances::default();
        for (name, value) in &raw.tolerances {
            tolerances
                .set(name, *value)
                .map_err(|e| invalid(&format!("tolerances.{name}"), e))?;
        }
        let mut integrator = if action.manifold().as_group().is_some() {
            IntegratorConfig::group_default()
        } else {
            IntegratorConfig::default()
        };
        if let Some(i) = &raw.integrator {
            integrator.scheme = i.scheme.unwrap_or(integrator.scheme);
            integrator.step = i.step.unwrap_or(integrator.step);
            integrator.projection = i.projection.unwrap_or(integrator.projection);
            integrator.blowup = i.blowup.unwrap_or(integrator.blowup);
        }
        FlowHandle::new(field.clone(), integrator).map_err(|e| invalid("integrator", e))?;
        let decompose = match &raw.decompose {
            None => DecomposeDefaults::default(),
            Some(d) => {
                let Some(chart) = &chart else {
                    return Err(invalid("decompose", "decompose defaults need a chart"));
                };
                if let Some(y0) = &d.y0 {
                    vector("decompose.y0", y0, chart.quotient_dim())?;
                }
                if let Some(g0) = &d.g0 {
                    vector("decompose.g0", g0, group.algebra_dim())?;
                }
                if let Some(t) = d.t {
                    finite("decompose.t", [&t])?;
                }
                DecomposeDefaults {
                    t: d.t,
                    y0: d.y0.clone(),
                    g0: d.g0.clone(),
                }
            }
        };
        Ok(Scenario {
            name: raw.name,
            description: raw.description,
            source: source.to_string(),
            action,
            field,
            derivation,
            w,
            chart,
            plan,
            tolerances,
            integrator,
            decompose,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn builtin(name: &str) -> Option<Result<Self>> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::parse(text, &format!("builtin:{n}")))
    }

    /// A path to an existing file, else a name searched in the scenario path
    /// and then among the bundled scenarios.
    pub fn resolve(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.is_file() {
            return Self::from_file(path);
        }
        let name = arg.strip_suffix(".toml").unwrap_or(arg);
        for dir in search_dirs() {
            let candidate = dir.join(format!("{name}.toml"));
            if candidate.is_file() {
                return Self::from_file(&candidate);
            }
        }
        match Self::builtin(name) {
            Some(s) => s,
            None => bail!("no scenario `{arg}`: not a file, not in ${SCENARIO_PATH_ENV}, not bundled"),
        }
    }
}

pub fn search_dirs() -> Vec<PathBuf> {
    std::env::var_os(SCENARIO_PATH_ENV)
        .map(|v| std::env::split_paths(&v).filter(|p| !p.as_os_str().is_empty()).collect())
        .unwrap_or_default()
}

/// Scenario names: those found in the search path, then bundled ones not
/// shadowed by them.
pub fn available() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for dir in search_dirs() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        found.sort();
        for p in found {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if !out.iter().any(|(n, _)| *n == name) {
                out.push((name, p.display().to_string()));
            }
        }
    }
    for (name, _) in BUILTIN {
        if !out.iter().any(|(n, _)| n == name) {
            out.push((name.to_string(), "bundled".into()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses() {
        for (name, text) in BUILTIN {
            let s = Scenario::parse(text, name).unwrap_or_else(|e| panic!("{name}: {e:#}"));
            assert_eq!(s.name, *name);
        }
    }

    fn err(text: &str) -> String {
        format!("{:#}", Scenario::parse(text, "t").unwrap_err())
    }

    const HEAD: &str = r#"
name = "x"
group = { name = "translation", dim = 2 }
manifold = { kind = "euclidean", dim = 2 }
action = { name = "translation" }
"#;

    #[test]
    fn dimension_mismatch_names_the_field() {
        let e = err(&format!("{HEAD}field = {{ family = \"affine\", a = [[1.0, 0.0], [0.0]], b = [0.0, 0.0] }}"));
        assert!(e.contains("field.a[1]: expected 2 entries, found 1"), "{e}");
        let e = err(&format!("{HEAD}field = {{ family = \"affine\", a = [[1.0, 0.0], [0.0, 1.0]], b = [0.0] }}"));
        assert!(e.contains("field.b: expected 2 entries"), "{e}");
    }

    #[test]
    fn unknown_names_are_rejected() {
        let e = err(&format!(
            "{HEAD}field = {{ family = \"affine\", a = [[1.0, 0.0], [0.0, 1.0]], b = [0.0, 0.0] }}\n[tolerances]\nstrongg = 1e-3\n"
        ));
        assert!(e.contains("tolerances.strongg"), "{e}");
        let e = err(&format!("{HEAD}field = {{ family = \"spline\" }}"));
        assert!(e.contains("spline"), "{e}");
        let e = err(&format!(
            "{HEAD}field = {{ family = \"affine\", a = [[1.0, 0.0], [0.0, 1.0]], b = [0.0, 0.0] }}\nchart = {{ kind = \"radial\" }}\n"
        ));
        assert!(e.contains("chart.kind"), "{e}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = err("name = \"x\"\ngroup = { name = \n");
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn group_and_action_must_agree() {
        let text = r#"
name = "x"
group = { name = "so3" }
manifold = { kind = "euclidean", dim = 2 }
action = { name = "rotation" }
field = { family = "affine", a = [[1.0, 0.0], [0.0, 1.0]], b = [0.0, 0.0] }
"#;
        let e = err(text);
        assert!(e.contains("manifold.dim"), "{e}");
    }
}
