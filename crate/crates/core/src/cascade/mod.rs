//! Cascade decomposition of weakly invariant systems.
//!
//! Given a free action with a global section `s` of `π : M → M/G`, a weakly
//! invariant `V` splits as
//!
//! ```text
//! ẏ = Ṽ(y)                     Ṽ = dπ ∘ V ∘ s
//! ġ = W(g) + g V̂(y)            V̂ = (dΦ^{s(y)})⁻¹ (V ∘ s − ds ∘ Ṽ)
//! ```
//!
//! with `p = Φ(g, s(y))`. Charts carry `π`, `s`, their differentials and the
//! inverse map `p ↦ (g, y)`; they are given per scenario, never derived.

mod affine;
mod chart;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::actions::{generator_matrix, min_singular_value, ManifoldPoint, VectorFieldM};
use crate::error::{Error, Result};
use crate::flows::{rk4_step, rkmk4_step, lie_euler_step, write_csv, FlowHandle, IntegratorConfig, Scheme};
use crate::invariance::FREE_THRESHOLD;
use crate::lie::matrix::{flatten_row_major, lstsq};
use crate::lie::{AlgebraVector, GroupElement, VectorFieldG};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan, Stream};

pub use affine::{as_group_field, check_group_affine, group_affine_decompose, GroupAffineDecomposition};
pub use chart::{BundleChart, ChartKind, ChartMap, ChartStats, QuotientPoint, QuotientTangent};

/// `Ṽ(y) = dπ(V(s(y)))`.
pub fn induced_quotient_field(v: &VectorFieldM, chart: &BundleChart, y: &QuotientPoint) -> Result<QuotientTangent> {
    let s = chart.section(y)?;
    chart.d_project(&v.eval(&s)?)
}

/// `max ‖dπ V(p) − dπ V(Φ(g, p))‖` over sampled `(g, p)`.
pub fn check_well_definedness(v: &VectorFieldM, chart: &BundleChart, plan: &SamplingPlan) -> Result<ResidualStats> {
    let action = chart.action();
    let gs = plan.group_elements(action.group())?;
    let ps = plan.manifold_points_n(action.manifold(), gs.len(), Stream::Points)?;
    let items: Vec<_> = gs.iter().zip(&ps).collect();
    let rows = par::try_map(&items, |(g, p)| {
        let a = chart.d_project(&v.eval(p)?)?;
        let b = chart.d_project(&v.eval(&action.apply(g, p)?)?)?;
        Ok::<f64, Error>((a.coords() - b.coords()).norm())
    })?;
    Ok(ResidualStats::from_values(rows))
}

/// `V̂(y)` and the substitution residual of its least-squares solve.
#[derive(Debug, Clone)]
pub struct ForcingTerm {
    pub u: AlgebraVector,
    /// `‖G x − (V(s(y)) − ds(Ṽ(y)))‖`, relative to `max(1, ‖V(s(y))‖)`.
    pub residual: f64,
}

/// `V̂(y)` by least squares on the generator matrix at `s(y)`. Errors with
/// [`Error::NotWeaklyInvariant`] when the relative substitution residual is
/// above `tol` (the difference is not orbit tangent).
pub fn forcing_term(v: &VectorFieldM, chart: &BundleChart, y: &QuotientPoint, tol: f64) -> Result<ForcingTerm> {
    let f = forcing_unchecked(v, chart, y)?;
    if !(f.residual < tol) {
        return Err(Error::NotWeaklyInvariant { residual: f.residual });
    }
    Ok(f)
}

fn forcing_unchecked(v: &VectorFieldM, chart: &BundleChart, y: &QuotientPoint) -> Result<ForcingTerm> {
    let action = chart.action();
    let s = chart.section(y)?;
    let vs = v.eval(&s)?;
    let vt = chart.d_project(&vs)?;
    let rhs = vs.dir() - chart.d_section(y, &vt)?.dir();
    let gen = generator_matrix(action, &s)?;
    let sv = min_singular_value(&gen);
    if !(sv >= FREE_THRESHOLD) {
        return Err(Error::RankDeficient {
            point: s.coords().as_slice().to_vec(),
            min_singular: sv,
        });
    }
    let x = lstsq(&gen, &rhs).ok_or(Error::Singular)?;
    let residual = (&gen * &x - &rhs).norm() / vs.dir().norm().max(1.0);
    Ok(ForcingTerm {
        u: AlgebraVector::new(action.group().clone(), x)?,
        residual,
    })
}

/// `p = Φ(g, s(y))`.
pub fn reconstruct(chart: &BundleChart, y: &QuotientPoint, g: &GroupElement) -> Result<ManifoldPoint> {
    chart.action().apply(g, &chart.section(y)?)
}

/// The cascade `ẏ = Ṽ(y)`, `ġ = W(g) + g V̂(y)` built from `V`, `W` and a chart.
#[derive(Debug, Clone)]
pub struct CascadeSystem {
    v: VectorFieldM,
    w: VectorFieldG,
    chart: BundleChart,
    forcing_tol: f64,
}

impl CascadeSystem {
    /// `forcing_tol` bounds the substitution residual accepted when
    /// evaluating `V̂`.
    pub fn new(v: VectorFieldM, w: VectorFieldG, chart: BundleChart, forcing_tol: f64) -> Result<Self> {
        let action = chart.action();
        if v.manifold().as_ref() != action.manifold().as_ref() {
            return Err(Error::DescriptorMismatch {
                expected: action.manifold().to_string(),
                found: v.manifold().to_string(),
            });
        }
        action.group().ensure_same(w.group())?;
        Ok(Self {
            v,
            w,
            chart,
            forcing_tol,
        })
    }

    pub fn chart(&self) -> &BundleChart {
        &self.chart
    }
    pub fn field(&self) -> &VectorFieldM {
        &self.v
    }
    pub fn w(&self) -> &VectorFieldG {
        &self.w
    }

    pub fn quotient_field(&self, y: &QuotientPoint) -> Result<QuotientTangent> {
        induced_quotient_field(&self.v, &self.chart, y)
    }

    pub fn forcing(&self, y: &QuotientPoint) -> Result<AlgebraVector> {
        Ok(forcing_term(&self.v, &self.chart, y, self.forcing_tol)?.u)
    }

    /// Substitution residuals of `V̂` at the projections of sampled points.
    pub fn check_forcing(&self, plan: &SamplingPlan) -> Result<ResidualStats> {
        let ps = plan.manifold_points(self.chart.action().manifold())?;
        let rows = par::try_map(&ps, |p| {
            let y = self.chart.project(p)?;
            Ok::<f64, Error>(forcing_unchecked(&self.v, &self.chart, &y)?.residual)
        })?;
        Ok(ResidualStats::from_values(rows))
    }
}

/// One row of a cascade run.
#[derive(Debug, Clone)]
pub struct CascadeRow {
    pub t: f64,
    pub y: DVector<f64>,
    pub g: DMatrix<f64>,
    /// `Φ(g, s(y))`.
    pub p: DVector<f64>,
}

/// Integrates the cascade and returns the terminal `(y, g)`.
pub fn integrate_cascade(
    system: &CascadeSystem,
    config: &IntegratorConfig,
    t: f64,
    y0: &QuotientPoint,
    g0: &GroupElement,
) -> Result<(QuotientPoint, GroupElement)> {
    let (y, g) = run_cascade(system, config, t, y0, g0, None)?;
    Ok((y, g))
}

/// Like [`integrate_cascade`] but keeps every grid point, with the
/// reconstructed `p`.
pub fn cascade_trajectory(
    system: &CascadeSystem,
    config: &IntegratorConfig,
    t: f64,
    y0: &QuotientPoint,
    g0: &GroupElement,
) -> Result<Vec<CascadeRow>> {
    let mut rows = Vec::new();
    run_cascade(system, config, t, y0, g0, Some(&mut rows))?;
    Ok(rows)
}

/// The quotient equation is advanced by RK4; the group equation by RKMK4
/// (Lie–Euler when configured) on the same grid, with `y` at stage times
/// taken from the cubic Hermite interpolant of the quotient step.
fn run_cascade(
    system: &CascadeSystem,
    config: &IntegratorConfig,
    t: f64,
    y0: &QuotientPoint,
    g0: &GroupElement,
    mut record: Option<&mut Vec<CascadeRow>>,
) -> Result<(QuotientPoint, GroupElement)> {
    config.validate()?;
    let chart = &system.chart;
    let group = system.w.group().clone();
    group.ensure_same(g0.group())?;
    if y0.coords().len() != chart.quotient_dim() {
        return Err(Error::Dimension {
            what: "quotient start point".into(),
            expected: chart.quotient_dim(),
            found: y0.coords().len(),
        });
    }
    let push = |rows: &mut Vec<CascadeRow>, t: f64, y: &DVector<f64>, g: &DMatrix<f64>| -> Result<()> {
        let yq = QuotientPoint::new(y.clone())?;
        let ge = GroupElement::from_matrix_unchecked(group.clone(), g.clone());
        let p = reconstruct(chart, &yq, &ge)?;
        rows.push(CascadeRow {
            t,
            y: y.clone(),
            g: g.clone(),
            p: p.coords().clone(),
        });
        Ok(())
    };
    let mut y = y0.coords().clone();
    let mut g = g0.matrix().clone();
    if let Some(rows) = record.as_deref_mut() {
        push(rows, 0.0, &y, &g)?;
    }
    if t == 0.0 {
        return Ok((y0.clone(), g0.clone()));
    }
    let (n, h) = config.grid(t);
    let vtilde = |y: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(system.quotient_field(&QuotientPoint::new(y.clone())?)?.coords().clone())
    };
    let forcing = |y: &DVector<f64>| -> Result<DMatrix<f64>> { Ok(system.forcing(&QuotientPoint::new(y.clone())?)?.matrix()) };
    let constant_forcing = if chart.quotient_dim() == 0 { Some(forcing(&y)?) } else { None };

    let mut fy = vtilde(&y)?;
    let mut u_start = match &constant_forcing {
        Some(u) => u.clone(),
        None => forcing(&y)?,
    };
    for k in 0..n {
        let tk = k as f64 * h;
        let y_next = rk4_step(&y, tk, h, &|_, z: &DVector<f64>| vtilde(z))?;
        let fy_next = vtilde(&y_next)?;
        let (u_mid, u_end) = match &constant_forcing {
            Some(u) => (u.clone(), u.clone()),
            None => {
                let y_mid = (&y + &y_next) * 0.5 + (&fy - &fy_next) * (h / 8.0);
                (forcing(&y_mid)?, forcing(&y_next)?)
            }
        };
        let xi = |tau: f64, m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let s = (tau - tk) / h;
            let u = if s < 0.25 {
                &u_start
            } else if s < 0.75 {
                &u_mid
            } else {
                &u_end
            };
            Ok(system.w.left_trivialized_ambient(m)? + u)
        };
        g = match config.scheme {
            Scheme::LieEulerExp => lie_euler_step(&group, &g, tk, h, &xi)?,
            _ => rkmk4_step(&group, &g, tk, h, &xi)?,
        };
        y = y_next;
        fy = fy_next;
        u_start = u_end;
        let norm = y.norm().max(g.norm());
        if !(norm <= config.blowup) {
            return Err(Error::Divergence { t: tk + h, norm });
        }
        if let Some(rows) = record.as_deref_mut() {
            push(rows, tk + h, &y, &g)?;
        }
    }
    Ok((QuotientPoint::new(y)?, GroupElement::from_matrix_unchecked(group, g)))
}

/// Terminal states of the cascade path and of direct integration of `V`.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub cascade: ManifoldPoint,
    pub direct: ManifoldPoint,
    pub deviation: f64,
}

/// Integrates the cascade from `(y0, g0)` and `V` from `Φ(g0, s(y0))`, and
/// compares the reconstructed terminal point with the direct one.
pub fn check_cascade_equivalence(
    system: &CascadeSystem,
    cascade_config: &IntegratorConfig,
    direct_config: &IntegratorConfig,
    t: f64,
    y0: &QuotientPoint,
    g0: &GroupElement,
) -> Result<EquivalenceReport> {
    let (y, g) = integrate_cascade(system, cascade_config, t, y0, g0)?;
    let cascade = reconstruct(&system.chart, &y, &g)?;
    let start = reconstruct(&system.chart, y0, g0)?;
    let direct = FlowHandle::new(system.v.clone(), *direct_config)?.evaluate(t, &start)?;
    let deviation = cascade.distance(&direct);
    Ok(EquivalenceReport {
        cascade,
        direct,
        deviation,
    })
}

/// CSV with header `t, y_i…, g_i_j…, p_i…` (matrix entries row-major).
pub fn write_cascade_csv<W: Write>(out: W, rows: &[CascadeRow]) -> std::io::Result<()> {
    let Some(first) = rows.first() else {
        return write_csv(out, &["t".to_string()], std::iter::empty());
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.y.len()).map(|i| format!("y_{i}")));
    let n = first.g.nrows();
    header.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("g_{i}_{j}"))));
    header.extend((0..first.p.len()).map(|i| format!("p_{i}")));
    write_csv(
        out,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.t];
            row.extend(r.y.iter().copied());
            row.extend(flatten_row_major(&r.g));
            row.extend(r.p.iter().copied());
            row
        }),
    )
}
