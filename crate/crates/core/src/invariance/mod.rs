//! Symmetry classification of vector fields and diffeomorphisms.
//!
//! For a vector field the test quantity is the residual
//! `Δ(g)(p) = dΦ_{g⁻¹} V(Φ(g, p)) − V(p)`. It vanishes for strongly invariant
//! fields and equals the generator field of a single algebra element
//! `ξ^W(g)` for weakly invariant ones. Fields whose residual is orbit tangent
//! at each point, without a common `ξ`, are reported as partial symmetries.

mod diffeo;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actions::{generator_matrix, min_singular_value, GroupAction, ManifoldPoint, TangentVectorM, VectorFieldM};
use crate::error::{Error, Result};
use crate::lie::matrix::{flatten_row_major, lstsq};
use crate::lie::{check_group_linear, AlgebraVector, GroupElement, VectorFieldG};
use crate::par;
use crate::sampling::{ResidualStats, SamplingPlan, Stream, Tolerances};

pub use diffeo::{
    check_automorphism, classify_diffeomorphism, recover_sigma_at, AutomorphismStats, Diffeomorphism, GroupMap,
    SigmaRecovery, GN_MAX_ITERATIONS,
};

/// Smallest singular value of a generator matrix accepted by [`solve_xi_w`].
pub const FREE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Strong,
    Weak,
    PartialOnly,
    None,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Strong => "Strong",
            Classification::Weak => "Weak",
            Classification::PartialOnly => "PartialOnly",
            Classification::None => "None",
        })
    }
}

/// `ξ^W` tabulated at one sampled `g` (matrix row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiRow {
    pub g: Vec<f64>,
    pub xi: Vec<f64>,
}

/// `σ(g)` tabulated at one sampled `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Outcome of a classification run.
#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub classification: Classification,
    /// Zero field for Strong, solver-backed field for Weak.
    pub recovered_w: Option<VectorFieldG>,
    pub recovered_sigma: Option<GroupMap>,
    /// Named residual statistics; which names appear depends on the path taken.
    pub stats: BTreeMap<String, ResidualStats>,
    pub plan: SamplingPlan,
    pub tolerances: Tolerances,
    /// `max(1, max ‖V(p)‖)` over the point batch (vector fields only).
    pub field_scale: f64,
    /// Smallest singular value of the generator matrix over the point batch.
    pub min_generator_singular: f64,
    pub notes: Vec<String>,
    pub xi_w: Vec<XiRow>,
    pub sigma: Vec<SigmaRow>,
}

/// Serializable view of an [`InvarianceReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub classification: Classification,
    pub stats: BTreeMap<String, ResidualStats>,
    pub seed: u64,
    pub groups: usize,
    pub points: usize,
    pub pairs: usize,
    pub tolerances: Tolerances,
    pub field_scale: f64,
    pub min_generator_singular: f64,
    pub notes: Vec<String>,
    pub xi_w: Vec<XiRow>,
    pub sigma: Vec<SigmaRow>,
}

impl InvarianceReport {
    fn new(plan: &SamplingPlan, tol: &Tolerances) -> Self {
        Self {
            classification: Classification::None,
            recovered_w: None,
            recovered_sigma: None,
            stats: BTreeMap::new(),
            plan: plan.clone(),
            tolerances: tol.clone(),
            field_scale: 1.0,
            min_generator_singular: f64::NAN,
            notes: Vec::new(),
            xi_w: Vec::new(),
            sigma: Vec::new(),
        }
    }

    pub fn stat(&self, name: &str) -> Option<ResidualStats> {
        self.stats.get(name).copied()
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            classification: self.classification,
            stats: self.stats.clone(),
            seed: self.plan.seed,
            groups: self.plan.groups,
            points: self.plan.points,
            pairs: self.plan.pairs,
            tolerances: self.tolerances.clone(),
            field_scale: self.field_scale,
            min_generator_singular: self.min_generator_singular,
            notes: self.notes.clone(),
            xi_w: self.xi_w.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

/// `Δ(g)(p) = dΦ_{g⁻¹} V(Φ(g, p)) − V(p)`, a tangent vector at `p`.
pub fn residual_field(v: &VectorFieldM, action: &GroupAction, g: &GroupElement, p: &ManifoldPoint) -> Result<TangentVectorM> {
    let gp = action.apply(g, p)?;
    let back = action.d_phi_g(&g.inverse()?, &v.eval(&gp)?)?;
    let here = v.eval(p)?;
    Ok(TangentVectorM::new_unchecked(p.clone(), back.dir() - here.dir()))
}

/// Least-squares `ξ^W(g)` over a point batch.
#[derive(Debug, Clone)]
pub struct XiSolution {
    pub xi: AlgebraVector,
    /// Worst per-point residual `‖G_p x − Δ(g)(p)‖` after substitution.
    pub consistency: f64,
}

/// Solves `generator_matrix(p) · x = Δ(g)(p)` jointly over `points`.
///
/// Errors with [`Error::RankDeficient`] naming the first point where the
/// action is not infinitesimally free.
pub fn solve_xi_w(v: &VectorFieldM, action: &GroupAction, g: &GroupElement, points: &[ManifoldPoint]) -> Result<XiSolution> {
    let gens = generators(action, points, FREE_THRESHOLD)?;
    solve_with(v, action, g, points, &gens)
}

fn generators(action: &GroupAction, points: &[ManifoldPoint], threshold: f64) -> Result<Vec<DMatrix<f64>>> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("at least one sample point is required".into()));
    }
    points
        .iter()
        .map(|p| {
            let m = generator_matrix(action, p)?;
            let s = min_singular_value(&m);
            if !(s >= threshold) {
                return Err(Error::RankDeficient {
                    point: p.coords().as_slice().to_vec(),
                    min_singular: s,
                });
            }
            Ok(m)
        })
        .collect()
}

fn solve_with(
    v: &VectorFieldM,
    action: &GroupAction,
    g: &GroupElement,
    points: &[ManifoldPoint],
    gens: &[DMatrix<f64>],
) -> Result<XiSolution> {
    let d = action.group().algebra_dim();
    let residuals: Vec<DVector<f64>> = points
        .iter()
        .map(|p| residual_field(v, action, g, p).map(|r| r.dir().clone()))
        .collect::<Result<_>>()?;
    let rows: usize = gens.iter().map(|m| m.nrows()).sum();
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    let mut offset = 0;
    for (m, r) in gens.iter().zip(&residuals) {
        a.view_mut((offset, 0), (m.nrows(), d)).copy_from(m);
        b.rows_mut(offset, m.nrows()).copy_from(r);
        offset += m.nrows();
    }
    let x = lstsq(&a, &b).ok_or(Error::Singular)?;
    let consistency = gens
        .iter()
        .zip(&residuals)
        .map(|(m, r)| (m * &x - r).norm())
        .fold(0.0, f64::max);
    Ok(XiSolution {
        xi: AlgebraVector::new(action.group().clone(), x)?,
        consistency,
    })
}

fn ensure_compatible(v: &VectorFieldM, action: &GroupAction) -> Result<()> {
    if v.manifold().as_ref() != action.manifold().as_ref() {
        return Err(Error::DescriptorMismatch {
            expected: action.manifold().to_string(),
            found: v.manifold().to_string(),
        });
    }
    if !action.declared_effective() {
        return Err(Error::InvalidConfig(format!("action {} is not effective", action.name())));
    }
    Ok(())
}

/// The recovered `W(g) = g ξ^W(g)`, re-solving over `points` at every call.
pub fn solver_backed_w(v: &VectorFieldM, action: &GroupAction, points: &[ManifoldPoint]) -> Result<VectorFieldG> {
    let gens = generators(action, points, FREE_THRESHOLD)?;
    let (v, action, points) = (v.clone(), action.clone(), points.to_vec());
    Ok(VectorFieldG::from_left_trivialization(
        &action.group().clone(),
        "recovered W",
        move |g| Ok(solve_with(&v, &action, g, &points, &gens)?.xi),
    ))
}

/// Classifies `v` as Strong, Weak, PartialOnly or None under `action`, at the
/// plan's samples.
///
/// Strong when the residual vanishes relative to the field scale; Weak when a
/// single `ξ^W(g)` explains the residual at every point for each sampled `g`;
/// PartialOnly when each residual vector is orbit tangent on its own. An
/// action that is not infinitesimally free on the samples only admits Strong
/// or None.
pub fn classify_vector_field(
    v: &VectorFieldM,
    action: &GroupAction,
    plan: &SamplingPlan,
    tol: &Tolerances,
) -> Result<InvarianceReport> {
    ensure_compatible(v, action)?;
    let mut report = InvarianceReport::new(plan, tol);
    let axioms = crate::actions::check_action_axioms(action, plan)?;
    if !(axioms.max() < tol.action_axioms) {
        return Err(Error::InvalidConfig(format!(
            "action {} violates the action axioms (residual {:.3e})",
            action.name(),
            axioms.max()
        )));
    }
    report.stats.insert("action_identity".into(), axioms.identity);
    report.stats.insert("action_compatibility".into(), axioms.compatibility);

    let gs = plan.group_elements(action.group())?;
    let ps = plan.manifold_points(action.manifold())?;
    let scale = ps
        .iter()
        .map(|p| v.eval(p).map(|t| t.dir().norm()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(1.0, f64::max);
    report.field_scale = scale;

    let residuals: Vec<Vec<DVector<f64>>> = par::try_map(&gs, |g| {
        ps.iter()
            .map(|p| residual_field(v, action, g, p).map(|r| r.dir().clone()))
            .collect::<Result<Vec<_>>>()
    })?;
    let strong = ResidualStats::from_values(residuals.iter().flatten().map(|r| r.norm() / scale));
    report.stats.insert("strong_residual".into(), strong);

    let gens: Vec<DMatrix<f64>> = ps.iter().map(|p| generator_matrix(action, p)).collect::<Result<_>>()?;
    let min_sv = gens.iter().map(min_singular_value).fold(f64::INFINITY, f64::min);
    report.min_generator_singular = min_sv;
    let free = min_sv >= tol.free;

    let tabulate = |report: &mut InvarianceReport| -> Result<Vec<XiSolution>> {
        let sols = par::try_map(&gs, |g| solve_with(v, action, g, &ps, &gens))?;
        report.xi_w = gs
            .iter()
            .zip(&sols)
            .map(|(g, s)| XiRow {
                g: flatten_row_major(g.matrix()),
                xi: s.xi.coords().as_slice().to_vec(),
            })
            .collect();
        Ok(sols)
    };

    if strong.passes(tol.strong) {
        report.classification = Classification::Strong;
        report.recovered_w = Some(VectorFieldG::zero(action.group()));
        if free {
            // The Weak certificate with W = 0.
            let sols = tabulate(&mut report)?;
            report.stats.insert(
                "strong_xi_norm".into(),
                ResidualStats::from_values(sols.iter().map(|s| s.xi.coords().norm() / scale)),
            );
        }
        return Ok(report);
    }

    if !free {
        report.notes.push(format!(
            "action is not infinitesimally free on the samples (min singular value {min_sv:.3e}); only Strong/None are decidable"
        ));
        report.classification = Classification::None;
        return Ok(report);
    }

    let sols = tabulate(&mut report)?;
    let consistency = ResidualStats::from_values(sols.iter().map(|s| s.consistency / scale));
    report.stats.insert("weak_consistency".into(), consistency);

    if consistency.passes(tol.weak) {
        report.classification = Classification::Weak;
        let w = solver_backed_w(v, action, &ps)?;
        report.stats.insert("group_linear".into(), check_group_linear(&w, plan)?);
        let alt = plan.manifold_points_n(action.manifold(), plan.points, Stream::PointsAlt)?;
        let alt_sols = par::try_map(&gs, |g| solve_xi_w(v, action, g, &alt))?;
        report.stats.insert(
            "w_uniqueness".into(),
            ResidualStats::from_values(
                sols.iter()
                    .zip(&alt_sols)
                    .map(|(a, b)| (a.xi.coords() - b.xi.coords()).norm()),
            ),
        );
        report.recovered_w = Some(w);
        return Ok(report);
    }

    // Per-point orbit tangency: each residual lies in the column space of its
    // own generator matrix.
    let tangency = ResidualStats::from_values(residuals.iter().flat_map(|row| {
        row.iter().zip(&gens).map(|(r, m)| match lstsq(m, r) {
            Some(x) => (m * x - r).norm() / scale,
            None => f64::INFINITY,
        })
    }));
    report.stats.insert("orbit_tangency".into(), tangency);
    report.classification = if tangency.passes(tol.weak) {
        Classification::PartialOnly
    } else {
        Classification::None
    };
    Ok(report)
}
